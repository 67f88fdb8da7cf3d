//! Uniform replay memory.

use rand::Rng;

#[derive(Debug, Clone)]
pub struct ReplayBuffer<T> {
    capacity: usize,
    items: Vec<T>,
    next: usize,
}

impl<T> ReplayBuffer<T> {
    /// `capacity` must be positive.
    pub fn new(capacity: usize) -> Self {
        assert!(capacity > 0, "replay capacity must be positive");
        ReplayBuffer {
            capacity,
            items: Vec::with_capacity(capacity.min(1 << 16)),
            next: 0,
        }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    /// Appends, overwriting the oldest entry once full.
    pub fn push(&mut self, item: T) {
        if self.items.len() < self.capacity {
            self.items.push(item);
        } else {
            self.items[self.next] = item;
        }
        self.next = (self.next + 1) % self.capacity;
    }

    /// `n` uniform draws with replacement; `None` while fewer than `n` items
    /// are stored.
    pub fn sample<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Option<Vec<&T>> {
        if self.items.len() < n || n == 0 {
            return None;
        }
        Some((0..n).map(|_| &self.items[rng.random_range(0..self.items.len())]).collect())
    }

    pub fn iter(&self) -> impl Iterator<Item = &T> {
        self.items.iter()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn ring_overwrites_oldest() {
        let mut b = ReplayBuffer::new(3);
        for i in 0..5 {
            b.push(i);
        }
        assert_eq!(b.len(), 3);
        let mut items: Vec<i32> = b.iter().copied().collect();
        items.sort();
        assert_eq!(items, [2, 3, 4]);
    }

    #[test]
    fn no_sampling_below_batch() {
        let mut b = ReplayBuffer::new(10);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        b.push(1);
        assert!(b.sample(2, &mut rng).is_none());
        b.push(2);
        assert_eq!(b.sample(2, &mut rng).unwrap().len(), 2);
    }

    #[test]
    fn sampling_is_uniform() {
        let mut b = ReplayBuffer::new(1000);
        for i in 0..1000usize {
            b.push(i);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut counts = vec![0u32; 1000];
        for _ in 0..100 {
            for &&i in &b.sample(1000, &mut rng).unwrap() {
                counts[i] += 1;
            }
        }
        // 100k draws: mean 100, sd sqrt(100 * 0.999).
        let sd = (100.0f64 * 0.999).sqrt();
        for &c in &counts {
            assert!((f64::from(c) - 100.0).abs() < 5.0 * sd, "count {c}");
        }
    }
}
