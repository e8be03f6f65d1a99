use super::{Grid1D, PdeError};

/// Direction of the exponential change of unknown `ũ = e^{−L(T−t)} u`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Transform {
    Forward,
    Inverse,
}

/// Grid samples `u(t_k, x_j)` of a decoupling field.
#[derive(Debug, Clone, PartialEq)]
pub struct DecouplingField {
    pub grid: Grid1D,
    /// `levels[k][j] = u(t_k, x_j)`, `k = 0..=nt`.
    levels: Vec<Vec<f64>>,
    /// `max |u|` over all nodes.
    pub m0: f64,
    /// Largest spatial difference quotient over all levels.
    pub lip: f64,
}

/// `(u, u_x, u_xx)` at a point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Derivatives {
    pub u: f64,
    pub ux: f64,
    pub uxx: f64,
}

impl DecouplingField {
    pub fn from_levels(grid: Grid1D, levels: Vec<Vec<f64>>) -> Self {
        assert_eq!(levels.len(), grid.nt + 1, "one level per time node");
        assert!(levels.iter().all(|l| l.len() == grid.nx), "one value per column");
        let dx = grid.dx();
        let m0 = levels
            .iter()
            .flatten()
            .fold(0.0f64, |m, v| m.max(v.abs()));
        let lip = levels
            .iter()
            .flat_map(|l| l.windows(2).map(move |w| (w[1] - w[0]).abs() / dx))
            .fold(0.0f64, f64::max);
        DecouplingField {
            grid,
            levels,
            m0,
            lip,
        }
    }

    /// Inject analytic samples `u(t_k, x_j)`.
    pub fn from_fn(grid: Grid1D, u: impl Fn(f64, f64) -> f64) -> Self {
        let levels = (0..=grid.nt)
            .map(|k| {
                let t = grid.t(k);
                (0..grid.nx).map(|j| u(t, grid.x(j))).collect()
            })
            .collect();
        Self::from_levels(grid, levels)
    }

    pub fn level(&self, k: usize) -> &[f64] {
        &self.levels[k]
    }

    pub fn levels(&self) -> &[Vec<f64>] {
        &self.levels
    }

    pub fn into_levels(self) -> Vec<Vec<f64>> {
        self.levels
    }

    pub fn value(&self, k: usize, j: usize) -> f64 {
        self.levels[k][j]
    }

    /// Empirical spatial Lipschitz constant restricted to `|x| ≤ window`.
    pub fn lip_within(&self, window: f64) -> f64 {
        let dx = self.grid.dx();
        let mut m: f64 = 0.0;
        for l in &self.levels {
            for j in 0..self.grid.nx - 1 {
                if self.grid.x(j).abs() <= window && self.grid.x(j + 1).abs() <= window {
                    m = m.max((l[j + 1] - l[j]).abs() / dx);
                }
            }
        }
        m
    }

    /// Difference-quotient derivatives on the grid node `(k, j)`.
    ///
    /// Central differences inside; one-sided first difference and `u_xx = 0`
    /// on the boundary columns.
    pub fn node_derivatives(&self, k: usize, j: usize) -> Derivatives {
        column_derivatives(&self.levels[k], j, self.grid.dx())
    }

    /// Bilinear interpolation of `u` and of the node derivatives.
    pub fn derivatives(&self, t: f64, x: f64) -> Result<Derivatives, PdeError> {
        let g = &self.grid;
        let slack = 1e-12 * (1.0 + g.x_max.abs().max(g.x_min.abs()));
        let tslack = 1e-12 * (1.0 + g.t_end.abs());
        if !(x >= g.x_min - slack && x <= g.x_max + slack)
            || !(t >= g.t_start - tslack && t <= g.t_end + tslack)
        {
            return Err(PdeError::OutOfHull { t, x });
        }
        let s = ((x - g.x_min) / (g.x_max - g.x_min) * (g.nx - 1) as f64).clamp(0.0, (g.nx - 1) as f64);
        let j0 = (s.floor() as usize).min(g.nx - 2);
        let theta = s - j0 as f64;
        let tau = ((t - g.t_start) / g.horizon() * g.nt as f64).clamp(0.0, g.nt as f64);
        let k0 = (tau.floor() as usize).min(g.nt - 1);
        let w = tau - k0 as f64;
        let at_level = |k: usize| {
            let a = self.node_derivatives(k, j0);
            let b = self.node_derivatives(k, j0 + 1);
            Derivatives {
                u: lerp(a.u, b.u, theta),
                ux: lerp(a.ux, b.ux, theta),
                uxx: lerp(a.uxx, b.uxx, theta),
            }
        };
        let lo = at_level(k0);
        if w == 0.0 {
            return Ok(lo);
        }
        let hi = at_level(k0 + 1);
        Ok(Derivatives {
            u: lerp(lo.u, hi.u, w),
            ux: lerp(lo.ux, hi.ux, w),
            uxx: lerp(lo.uxx, hi.uxx, w),
        })
    }

    /// Multiply level `t` by `e^{∓L(T−t)}`.
    pub fn exp_transform(&self, lipschitz: f64, direction: Transform) -> DecouplingField {
        let sign = match direction {
            Transform::Forward => -1.0,
            Transform::Inverse => 1.0,
        };
        let t_end = self.grid.t_end;
        let levels = self
            .levels
            .iter()
            .enumerate()
            .map(|(k, level)| {
                let factor = (sign * lipschitz * (t_end - self.grid.t(k))).exp();
                level.iter().map(|v| v * factor).collect()
            })
            .collect();
        DecouplingField::from_levels(self.grid, levels)
    }

    /// Largest `|u(t,x) − other(t,x)|` over shared nodes with `|x| ≤ window`.
    ///
    /// Both fields must share the spatial grid; `other`'s time levels are
    /// matched by time with tolerance `1e-9`.
    pub fn sup_gap(&self, other: &DecouplingField, window: f64) -> f64 {
        let mut gap: f64 = 0.0;
        for k in 0..=self.grid.nt {
            let t = self.grid.t(k);
            let Some(ko) = other.level_at_time(t) else {
                continue;
            };
            for j in 0..self.grid.nx {
                if self.grid.x(j).abs() <= window {
                    gap = gap.max((self.levels[k][j] - other.levels[ko][j]).abs());
                }
            }
        }
        gap
    }

    /// Index of the level whose time is within `1e-9` of `t`.
    pub fn level_at_time(&self, t: f64) -> Option<usize> {
        let g = &self.grid;
        let tau = (t - g.t_start) / g.horizon() * g.nt as f64;
        let k = tau.round();
        if k < 0.0 || k > g.nt as f64 {
            return None;
        }
        let k = k as usize;
        ((g.t(k) - t).abs() <= 1e-9).then_some(k)
    }
}

#[inline]
fn lerp(a: f64, b: f64, w: f64) -> f64 {
    if w == 0.0 {
        a
    } else {
        (1.0 - w) * a + w * b
    }
}

#[inline]
pub(crate) fn column_derivatives(level: &[f64], j: usize, dx: f64) -> Derivatives {
    let n = level.len();
    let u = level[j];
    if j == 0 {
        Derivatives {
            u,
            ux: (level[1] - level[0]) / dx,
            uxx: 0.0,
        }
    } else if j == n - 1 {
        Derivatives {
            u,
            ux: (level[n - 1] - level[n - 2]) / dx,
            uxx: 0.0,
        }
    } else {
        let (up, down) = (level[j + 1], level[j - 1]);
        Derivatives {
            u,
            ux: (up - down) / (2.0 * dx),
            uxx: ((up - u) - (u - down)) / (dx * dx),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid() -> Grid1D {
        Grid1D::new(-6.0, 6.0, 241, 1.0, 20)
    }

    #[test]
    fn constant_field() {
        let f = DecouplingField::from_fn(grid(), |_, _| 2.5);
        for &(t, x) in &[(0.0, 0.0), (0.33, -5.99), (1.0, 6.0), (0.5, 1.234)] {
            let d = f.derivatives(t, x).unwrap();
            assert_eq!((d.u, d.ux, d.uxx), (2.5, 0.0, 0.0));
        }
        assert_eq!(f.m0, 2.5);
        assert_eq!(f.lip, 0.0);
    }

    #[test]
    fn injected_square() {
        let f = DecouplingField::from_fn(grid(), |_, x| x * x);
        let d = f.derivatives(0.5, 1.0).unwrap();
        let dx2 = grid().dx().powi(2);
        assert!((d.u - 1.0).abs() <= dx2);
        assert!((d.ux - 2.0).abs() <= dx2);
        assert!((d.uxx - 2.0).abs() <= 10.0 * dx2);
        // off-grid point: linear interpolation error is at most dx²/4 for x²
        let d = f.derivatives(0.5, 1.01).unwrap();
        assert!((d.u - 1.0201).abs() <= dx2 / 4.0 + 1e-12);
        assert!((d.ux - 2.02).abs() <= 1e-9);
    }

    #[test]
    fn even_field_has_zero_slope_at_origin() {
        let f = DecouplingField::from_fn(grid(), |t, x| (x * 0.7).cos() * (1.0 + t) + x.powi(4));
        for k in 0..=20 {
            let t = grid().t(k);
            assert_eq!(f.derivatives(t, 0.0).unwrap().ux, 0.0);
        }
        assert_eq!(f.derivatives(0.123, 0.0).unwrap().ux, 0.0);
    }

    #[test]
    fn out_of_hull() {
        let f = DecouplingField::from_fn(grid(), |_, x| x);
        assert!(matches!(
            f.derivatives(0.5, 6.5),
            Err(PdeError::OutOfHull { .. })
        ));
        assert!(matches!(
            f.derivatives(1.5, 0.0),
            Err(PdeError::OutOfHull { .. })
        ));
    }

    #[test]
    fn exp_transform_roundtrip() {
        let f = DecouplingField::from_fn(grid(), |t, x| x.sin() + t);
        let back = f
            .exp_transform(0.7, Transform::Forward)
            .exp_transform(0.7, Transform::Inverse);
        let gap = f
            .levels()
            .iter()
            .flatten()
            .zip(back.levels().iter().flatten())
            .fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
        assert!(gap <= 1e-12);
        let fwd = f.exp_transform(0.7, Transform::Forward);
        assert_eq!(fwd.level(20), f.level(20));
        let ones = DecouplingField::from_fn(grid(), |_, _| 1.0).exp_transform(1.0, Transform::Forward);
        assert!((ones.value(0, 7) - (-1.0f64).exp()).abs() < 1e-15);
        assert!((ones.value(0, 7) - 0.3678794).abs() < 1e-7);
    }

    #[test]
    fn lipschitz_of_linear_field() {
        let f = DecouplingField::from_fn(grid(), |_, x| 3.0 * x);
        assert!((f.lip - 3.0).abs() < 1e-12);
        assert!((f.m0 - 18.0).abs() < 1e-12);
    }
}
