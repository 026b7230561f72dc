//! Two-pass connected-component labeling with union-find.

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Connectivity {
    Four,
    #[default]
    Eight,
}

/// Component labels for a binary raster: 0 is background, regions are
/// numbered from 1 in raster order of their first pixel.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Components {
    pub height: usize,
    pub width: usize,
    pub labels: Vec<u32>,
    pub count: usize,
}

impl Components {
    /// Pixel count of every region, indexed by `label - 1`.
    pub fn sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0usize; self.count];
        for &l in &self.labels {
            if l > 0 {
                sizes[l as usize - 1] += 1;
            }
        }
        sizes
    }
}

fn find(parent: &mut [u32], mut x: u32) -> u32 {
    while parent[x as usize] != x {
        let p = parent[x as usize];
        parent[x as usize] = parent[p as usize];
        x = p;
    }
    x
}

fn union(parent: &mut [u32], a: u32, b: u32) {
    let (ra, rb) = (find(parent, a), find(parent, b));
    if ra != rb {
        let (lo, hi) = if ra < rb { (ra, rb) } else { (rb, ra) };
        parent[hi as usize] = lo;
    }
}

pub fn connected_components(mask: &[bool], height: usize, width: usize, conn: Connectivity) -> Components {
    assert_eq!(mask.len(), height * width, "mask size does not match dims");
    let mut labels = vec![0u32; mask.len()];
    let mut parent: Vec<u32> = vec![0];
    for y in 0..height {
        for x in 0..width {
            let i = y * width + x;
            if !mask[i] {
                continue;
            }
            let mut neighbors = [0u32; 4];
            let mut k = 0;
            let mut push = |l: u32| {
                if l > 0 {
                    neighbors[k] = l;
                    k += 1;
                }
            };
            if x > 0 {
                push(labels[i - 1]);
            }
            if y > 0 {
                push(labels[i - width]);
                if conn == Connectivity::Eight {
                    if x > 0 {
                        push(labels[i - width - 1]);
                    }
                    if x + 1 < width {
                        push(labels[i - width + 1]);
                    }
                }
            }
            if k == 0 {
                let l = parent.len() as u32;
                parent.push(l);
                labels[i] = l;
            } else {
                let l = neighbors[..k].iter().copied().min().expect("non-empty");
                labels[i] = l;
                for &n in &neighbors[..k] {
                    union(&mut parent, l, n);
                }
            }
        }
    }
    // Second pass: resolve roots and renumber densely in raster order.
    let mut dense = vec![0u32; parent.len()];
    let mut count = 0u32;
    for l in labels.iter_mut() {
        if *l == 0 {
            continue;
        }
        let root = find(&mut parent, *l) as usize;
        if dense[root] == 0 {
            count += 1;
            dense[root] = count;
        }
        *l = dense[root];
    }
    Components {
        height,
        width,
        labels,
        count: count as usize,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn flood_fill(mask: &[bool], h: usize, w: usize, conn: Connectivity) -> Vec<u32> {
        let mut out = vec![0u32; mask.len()];
        let mut next = 0;
        for start in 0..mask.len() {
            if !mask[start] || out[start] != 0 {
                continue;
            }
            next += 1;
            let mut stack = vec![start];
            out[start] = next;
            while let Some(p) = stack.pop() {
                let (y, x) = ((p / w) as isize, (p % w) as isize);
                for dy in -1isize..=1 {
                    for dx in -1isize..=1 {
                        if (dy == 0 && dx == 0) || (conn == Connectivity::Four && dy != 0 && dx != 0) {
                            continue;
                        }
                        let (ny, nx) = (y + dy, x + dx);
                        if ny < 0 || nx < 0 || ny >= h as isize || nx >= w as isize {
                            continue;
                        }
                        let q = ny as usize * w + nx as usize;
                        if mask[q] && out[q] == 0 {
                            out[q] = next;
                            stack.push(q);
                        }
                    }
                }
            }
        }
        out
    }

    #[test]
    fn basic_cases() {
        assert_eq!(connected_components(&[false; 9], 3, 3, Connectivity::Eight).count, 0);
        let diag = [true, false, false, true];
        assert_eq!(connected_components(&diag, 2, 2, Connectivity::Eight).count, 1);
        assert_eq!(connected_components(&diag, 2, 2, Connectivity::Four).count, 2);
        // U shape merges two provisional labels.
        #[rustfmt::skip]
        let u = [
            true, false, true,
            true, false, true,
            true, true, true,
        ];
        let c = connected_components(&u, 3, 3, Connectivity::Four);
        assert_eq!(c.count, 1);
        assert_eq!(c.sizes(), vec![7]);
    }

    proptest! {
        #[test]
        fn matches_flood_fill(bits in proptest::collection::vec(any::<bool>(), 256), eight in any::<bool>()) {
            let conn = if eight { Connectivity::Eight } else { Connectivity::Four };
            let c = connected_components(&bits, 16, 16, conn);
            let oracle = flood_fill(&bits, 16, 16, conn);
            prop_assert_eq!(c.labels, oracle.clone());
            prop_assert_eq!(c.count as u32, oracle.iter().copied().max().unwrap_or(0));
        }
    }
}
