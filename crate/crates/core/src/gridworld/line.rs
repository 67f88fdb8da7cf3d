//! Supercover line traversal between cell centers.

use super::GridPoint;

/// Every cell touched by the closed segment joining the centers of `a` and
/// `b`, ordered from `a` to `b`.
///
/// When the segment passes exactly through a cell corner, both side cells
/// sharing that corner are emitted before the diagonal cell. The resulting
/// set is the same whichever endpoint the walk starts from.
pub fn supercover(a: GridPoint, b: GridPoint) -> Vec<GridPoint> {
    let di = b.i - a.i;
    let dj = b.j - a.j;
    let ni = di.unsigned_abs() as i64;
    let nj = dj.unsigned_abs() as i64;
    let si = di.signum();
    let sj = dj.signum();

    let mut cells = Vec::with_capacity((ni + nj + 1) as usize);
    let (mut i, mut j) = (a.i, a.j);
    cells.push(a);
    let (mut ti, mut tj) = (0i64, 0i64);
    while ti < ni || tj < nj {
        // Compare the parameter at which the segment crosses the next row
        // boundary, (2ti+1)/(2ni), with the next column boundary, (2tj+1)/(2nj).
        let decision = (1 + 2 * ti) * nj - (1 + 2 * tj) * ni;
        if decision == 0 {
            cells.push(GridPoint::new(i + si, j));
            cells.push(GridPoint::new(i, j + sj));
            i += si;
            j += sj;
            ti += 1;
            tj += 1;
        } else if decision < 0 {
            i += si;
            ti += 1;
        } else {
            j += sj;
            tj += 1;
        }
        cells.push(GridPoint::new(i, j));
    }
    cells
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::BTreeSet;

    fn gp(i: i32, j: i32) -> GridPoint {
        GridPoint::new(i, j)
    }

    #[test]
    fn single_cell() {
        assert_eq!(supercover(gp(3, 3), gp(3, 3)), vec![gp(3, 3)]);
    }

    #[test]
    fn horizontal_and_vertical() {
        assert_eq!(
            supercover(gp(0, 0), gp(0, 3)),
            vec![gp(0, 0), gp(0, 1), gp(0, 2), gp(0, 3)]
        );
        assert_eq!(
            supercover(gp(2, 1), gp(0, 1)),
            vec![gp(2, 1), gp(1, 1), gp(0, 1)]
        );
    }

    #[test]
    fn exact_diagonal_touches_corner_neighbours() {
        let cells: BTreeSet<_> = supercover(gp(0, 0), gp(2, 2)).into_iter().collect();
        let expected: BTreeSet<_> = [
            gp(0, 0),
            gp(1, 0),
            gp(0, 1),
            gp(1, 1),
            gp(2, 1),
            gp(1, 2),
            gp(2, 2),
        ]
        .into_iter()
        .collect();
        assert_eq!(cells, expected);
    }

    #[test]
    fn shallow_slope() {
        // The segment crosses the row boundary at column 1.5, a cell corner.
        let cells: BTreeSet<_> = supercover(gp(0, 0), gp(1, 3)).into_iter().collect();
        let expected: BTreeSet<_> = [gp(0, 0), gp(0, 1), gp(0, 2), gp(1, 1), gp(1, 2), gp(1, 3)]
            .into_iter()
            .collect();
        assert_eq!(cells, expected);
    }

    #[test]
    fn consecutive_cells_are_adjacent_or_corner_split() {
        let cells = supercover(gp(-3, 5), gp(7, -2));
        assert_eq!(cells.first(), Some(&gp(-3, 5)));
        assert_eq!(cells.last(), Some(&gp(7, -2)));
        for w in cells.windows(2) {
            let d = (w[1].i - w[0].i).abs() + (w[1].j - w[0].j).abs();
            assert!(d <= 2, "{:?} -> {:?}", w[0], w[1]);
        }
    }
}
