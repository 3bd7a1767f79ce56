use std::f64::consts::PI;

use crate::error::{NlcError, Result};
use crate::net::{argmax_columns, Model};
use crate::tensor::{Matrix, Rng};

/// Argmax class over a latitude/longitude grid on the sphere spanned by
/// three anchor inputs.
#[derive(Clone, Debug)]
pub struct RegionMap {
    pub n_theta: usize,
    pub n_phi: usize,
    /// Row-major over (theta, phi).
    pub classes: Vec<usize>,
    pub anchors: Matrix,
}

impl RegionMap {
    pub fn class_at(&self, i: usize, j: usize) -> usize {
        self.classes[i * self.n_phi + j]
    }

    /// Sphere coordinates of grid cell `(i, j)`. Latitudes sit at cell
    /// centres so that no row collapses onto a pole.
    pub fn point(&self, i: usize, j: usize) -> [f64; 3] {
        sphere_point(i, j, self.n_theta, self.n_phi)
    }

    /// Connected same-class regions, with longitude wrapping and cells on
    /// opposite sides of a pole treated as neighbours.
    pub fn region_count(&self) -> usize {
        let (nt, np) = (self.n_theta, self.n_phi);
        let mut parent: Vec<usize> = (0..nt * np).collect();
        fn find(p: &mut [usize], mut a: usize) -> usize {
            while p[a] != a {
                p[a] = p[p[a]];
                a = p[a];
            }
            a
        }
        let join = |p: &mut Vec<usize>, a: usize, b: usize| {
            if self.classes[a] == self.classes[b] {
                let (ra, rb) = (find(p, a), find(p, b));
                p[ra] = rb;
            }
        };
        for i in 0..nt {
            for j in 0..np {
                let a = i * np + j;
                join(&mut parent, a, i * np + (j + 1) % np);
                if i + 1 < nt {
                    join(&mut parent, a, (i + 1) * np + j);
                }
            }
        }
        for j in 0..np / 2 {
            let opposite = j + np / 2;
            join(&mut parent, j, opposite);
            join(&mut parent, (nt - 1) * np + j, (nt - 1) * np + opposite);
        }
        (0..nt * np).filter(|&a| find(&mut parent, a) == a).count()
    }

    /// Grid as CSV-like text: one line per latitude.
    pub fn to_grid_text(&self) -> String {
        let mut s = String::new();
        for i in 0..self.n_theta {
            let row: Vec<String> = (0..self.n_phi)
                .map(|j| self.class_at(i, j).to_string())
                .collect();
            s.push_str(&row.join(","));
            s.push('\n');
        }
        s
    }
}

fn sphere_point(i: usize, j: usize, nt: usize, np: usize) -> [f64; 3] {
    let theta = (i as f64 + 0.5) * PI / nt as f64;
    let phi = 2.0 * PI * j as f64 / np as f64;
    [theta.sin() * phi.cos(), theta.sin() * phi.sin(), theta.cos()]
}

/// Evaluates `model` at `a x1 + b x2 + c x3` for `(a, b, c)` on a
/// `resolution x 2 resolution` grid of the unit sphere, with standard
/// Gaussian anchors `x1, x2, x3`. The whole grid forms one batch.
pub fn output_region_map<M: Model + ?Sized>(
    model: &M,
    rng: &mut Rng,
    resolution: usize,
) -> Result<RegionMap> {
    if model.d_out() < 2 {
        return Err(NlcError::Configuration("region map needs at least 2 outputs".into()));
    }
    if resolution < 2 {
        return Err(NlcError::Configuration("region map resolution must be at least 2".into()));
    }
    let d = model.d_in();
    let anchors = Matrix::from_fn(d, 3, |_, _| rng.normal());
    let (nt, np) = (resolution, 2 * resolution);
    let mut x = Matrix::zeros(d, nt * np);
    for i in 0..nt {
        for j in 0..np {
            let p = sphere_point(i, j, nt, np);
            let col = &anchors * nalgebra::Vector3::new(p[0], p[1], p[2]);
            x.column_mut(i * np + j).copy_from(&col);
        }
    }
    let f = model.apply(&x)?;
    Ok(RegionMap {
        n_theta: nt,
        n_phi: np,
        classes: argmax_columns(&f),
        anchors,
    })
}
