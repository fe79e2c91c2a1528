//! Uniform hash grid over 3D positions used for exact k-nearest-neighbor and
//! fixed-radius queries.

use std::collections::HashMap;

use nalgebra::Vector3;

type CellKey = (i64, i64, i64);

#[derive(Debug, Clone)]
pub struct PointGrid {
    cell: f64,
    cells: HashMap<CellKey, Vec<usize>>,
    positions: Vec<Vector3<f64>>,
    /// Bounds of occupied cell keys, used to stop ring expansion.
    key_min: [i64; 3],
    key_max: [i64; 3],
}

impl PointGrid {
    pub fn new(positions: &[Vector3<f64>], cell: f64) -> Self {
        assert!(cell > 0.0 && cell.is_finite(), "grid cell size must be positive");
        let mut cells: HashMap<CellKey, Vec<usize>> = HashMap::new();
        let mut key_min = [i64::MAX; 3];
        let mut key_max = [i64::MIN; 3];
        for (i, p) in positions.iter().enumerate() {
            let k = key_of(p, cell);
            for (axis, v) in [k.0, k.1, k.2].into_iter().enumerate() {
                key_min[axis] = key_min[axis].min(v);
                key_max[axis] = key_max[axis].max(v);
            }
            cells.entry(k).or_default().push(i);
        }
        Self {
            cell,
            cells,
            positions: positions.to_vec(),
            key_min,
            key_max,
        }
    }

    /// Picks a cell size so that a cell holds roughly `k` points for a
    /// volumetric distribution.
    pub fn for_knn(positions: &[Vector3<f64>], k: usize) -> Self {
        let n = positions.len().max(1);
        let mut lo = Vector3::repeat(f64::INFINITY);
        let mut hi = Vector3::repeat(f64::NEG_INFINITY);
        for p in positions {
            lo = lo.inf(p);
            hi = hi.sup(p);
        }
        let extent = (hi - lo).max();
        let cell = if extent.is_finite() && extent > 0.0 {
            extent * (k as f64 / n as f64).cbrt()
        } else {
            1.0
        };
        Self::new(positions, cell.max(1e-9))
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    /// Exact k nearest neighbors of `query` (which may itself be a member),
    /// sorted by ascending distance, ties by index.
    pub fn knn(&self, query: &Vector3<f64>, k: usize) -> Vec<usize> {
        let k = k.min(self.positions.len());
        if k == 0 {
            return Vec::new();
        }
        let center = key_of(query, self.cell);
        let mut found: Vec<(f64, usize)> = Vec::new();
        let mut ring: i64 = 0;
        loop {
            let side = (2 * ring + 1) as usize;
            if side.saturating_pow(3) > 8 * self.cells.len() + 27 {
                return self.knn_brute(query, k);
            }
            self.visit_shell(center, ring, |i| {
                found.push(((self.positions[i] - query).norm_squared(), i));
            });
            if found.len() >= k {
                found.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
                // Every point outside the searched block lies farther than
                // ring * cell from the query.
                let covered = ring as f64 * self.cell;
                if found[k - 1].0.sqrt() <= covered || self.shell_exhausted(center, ring) {
                    found.truncate(k);
                    return found.into_iter().map(|(_, i)| i).collect();
                }
            }
            ring += 1;
        }
    }

    fn knn_brute(&self, query: &Vector3<f64>, k: usize) -> Vec<usize> {
        let mut all: Vec<(f64, usize)> = self
            .positions
            .iter()
            .enumerate()
            .map(|(i, p)| ((p - query).norm_squared(), i))
            .collect();
        all.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        all.into_iter().take(k).map(|(_, i)| i).collect()
    }

    /// All indices within `radius` (inclusive) of `query`, ascending.
    pub fn within(&self, query: &Vector3<f64>, radius: f64) -> Vec<usize> {
        let reach = (radius / self.cell).ceil() as i64;
        let center = key_of(query, self.cell);
        let r2 = radius * radius;
        let mut out = Vec::new();
        for dx in -reach..=reach {
            for dy in -reach..=reach {
                for dz in -reach..=reach {
                    if let Some(members) = self.cells.get(&(center.0 + dx, center.1 + dy, center.2 + dz)) {
                        out.extend(
                            members
                                .iter()
                                .copied()
                                .filter(|&i| (self.positions[i] - query).norm_squared() <= r2),
                        );
                    }
                }
            }
        }
        out.sort_unstable();
        out
    }

    fn visit_shell(&self, c: CellKey, ring: i64, mut f: impl FnMut(usize)) {
        let mut visit = |k: CellKey| {
            if let Some(m) = self.cells.get(&k) {
                m.iter().copied().for_each(&mut f);
            }
        };
        if ring == 0 {
            visit(c);
            return;
        }
        for dx in -ring..=ring {
            for dy in -ring..=ring {
                let on_side = dx.abs() == ring || dy.abs() == ring;
                if on_side {
                    for dz in -ring..=ring {
                        visit((c.0 + dx, c.1 + dy, c.2 + dz));
                    }
                } else {
                    visit((c.0 + dx, c.1 + dy, c.2 - ring));
                    visit((c.0 + dx, c.1 + dy, c.2 + ring));
                }
            }
        }
    }

    fn shell_exhausted(&self, c: CellKey, ring: i64) -> bool {
        c.0 - ring <= self.key_min[0]
            && c.0 + ring >= self.key_max[0]
            && c.1 - ring <= self.key_min[1]
            && c.1 + ring >= self.key_max[1]
            && c.2 - ring <= self.key_min[2]
            && c.2 + ring >= self.key_max[2]
    }
}

fn key_of(p: &Vector3<f64>, cell: f64) -> CellKey {
    (
        (p.x / cell).floor() as i64,
        (p.y / cell).floor() as i64,
        (p.z / cell).floor() as i64,
    )
}
