//! Coarse-to-fine inverse-search patch flow.
//!
//! At each pyramid level a regular grid of patches from the reference frame
//! is aligned to the target frame by inverse-compositional Gauss-Newton on a
//! mean-normalized SSD, starting from the upsampled flow of the coarser
//! level. Patch displacements are then densified by overlap-weighted
//! averaging and optionally smoothed.

use super::{densify, patch_origins, pyramid, FlowConfig};
use crate::grid::Grid;

pub(crate) fn estimate(reference: &Grid, target: &Grid, cfg: &FlowConfig) -> (Grid, Grid) {
    let levels = cfg.levels_for(reference.width(), reference.height());
    let pyr_ref = pyramid::build(reference, levels);
    let pyr_tgt = pyramid::build(target, levels);
    let mut flow: Option<(Grid, Grid)> = None;
    for l in (0..pyr_ref.len()).rev() {
        let (a, b) = (&pyr_ref[l], &pyr_tgt[l]);
        let (w, h) = (a.width(), a.height());
        let (init_x, init_y) = match flow.take() {
            None => (Grid::new(w, h), Grid::new(w, h)),
            Some((fx, fy)) => (pyramid::upsample_flow(&fx, w, h), pyramid::upsample_flow(&fy, w, h)),
        };
        let ps = cfg.patch_size.min(w).min(h);
        let stride = cfg.patch_stride.min(ps);
        let (gx, gy) = pyramid::gradients(a);
        let origins = patch_origins(w, h, ps, stride);
        let center = (ps - 1) as f32 * 0.5;
        let disp: Vec<(f32, f32)> = origins
            .iter()
            .map(|&(px, py)| {
                let cx = px as f32 + center;
                let cy = py as f32 + center;
                let init = (init_x.sample_bilinear_f32(cx, cy), init_y.sample_bilinear_f32(cx, cy));
                let patch = Patch::new(a, &gx, &gy, px, py, ps);
                patch.search(b, init, cfg.gradient_descent_iters)
            })
            .collect();
        let (mut dx, mut dy) = densify(a, b, &origins, ps, &disp);
        if cfg.refinement {
            smooth(&mut dx, cfg.refinement_iters, cfg.refinement_smoothness);
            smooth(&mut dy, cfg.refinement_iters, cfg.refinement_smoothness);
        }
        flow = Some((dx, dy));
    }
    flow.expect("pyramid has at least one level")
}

/// Template data for one reference patch, precomputed once per level.
struct Patch {
    px: usize,
    py: usize,
    size: usize,
    /// Zero-mean template intensities.
    template: Vec<f32>,
    /// Zero-mean template gradients.
    gx: Vec<f32>,
    gy: Vec<f32>,
    inv_hessian: Option<[f32; 3]>,
}

impl Patch {
    fn new(img: &Grid, gx: &Grid, gy: &Grid, px: usize, py: usize, size: usize) -> Self {
        let n = size * size;
        let mut template = Vec::with_capacity(n);
        let mut pgx = Vec::with_capacity(n);
        let mut pgy = Vec::with_capacity(n);
        for j in 0..size {
            for i in 0..size {
                template.push(img.get(px + i, py + j));
                pgx.push(gx.get(px + i, py + j));
                pgy.push(gy.get(px + i, py + j));
            }
        }
        center(&mut template);
        center(&mut pgx);
        center(&mut pgy);
        let (mut hxx, mut hxy, mut hyy) = (0.0f64, 0.0f64, 0.0f64);
        for k in 0..n {
            let (a, b) = (pgx[k] as f64, pgy[k] as f64);
            hxx += a * a;
            hxy += a * b;
            hyy += b * b;
        }
        let det = hxx * hyy - hxy * hxy;
        let inv_hessian = if det > 1e-12 * (hxx + hyy).powi(2).max(1e-12) && det > 1e-14 {
            Some([(hyy / det) as f32, (-hxy / det) as f32, (hxx / det) as f32])
        } else {
            None
        };
        Self {
            px,
            py,
            size,
            template,
            gx: pgx,
            gy: pgy,
            inv_hessian,
        }
    }

    /// Zero-mean warped target patch at displacement `u`.
    fn warp(&self, target: &Grid, u: (f32, f32), out: &mut Vec<f32>) {
        out.clear();
        let (w, h) = (target.width(), target.height());
        let fx0 = self.px as f32 + u.0;
        let fy0 = self.py as f32 + u.1;
        let ix = fx0.floor();
        let iy = fy0.floor();
        let inside = ix >= 0.0 && iy >= 0.0 && (ix as usize + self.size) < w && (iy as usize + self.size) < h;
        if inside {
            let (ax, ay) = (fx0 - ix, fy0 - iy);
            let (w00, w10, w01, w11) = ((1.0 - ax) * (1.0 - ay), ax * (1.0 - ay), (1.0 - ax) * ay, ax * ay);
            let data = target.data();
            let (bx, by) = (ix as usize, iy as usize);
            for j in 0..self.size {
                let r0 = (by + j) * w + bx;
                let r1 = r0 + w;
                for i in 0..self.size {
                    out.push(
                        w00 * data[r0 + i] + w10 * data[r0 + i + 1] + w01 * data[r1 + i] + w11 * data[r1 + i + 1],
                    );
                }
            }
        } else {
            for j in 0..self.size {
                for i in 0..self.size {
                    out.push(target.sample_bilinear_f32(fx0 + i as f32, fy0 + j as f32));
                }
            }
        }
        center(out);
    }

    fn ssd(&self, warped: &[f32]) -> f32 {
        warped.iter().zip(&self.template).map(|(a, b)| (a - b) * (a - b)).sum()
    }

    fn search(&self, target: &Grid, init: (f32, f32), iters: usize) -> (f32, f32) {
        let Some([ixx, ixy, iyy]) = self.inv_hessian else {
            return init;
        };
        let mut buf = Vec::with_capacity(self.size * self.size);
        self.warp(target, init, &mut buf);
        let initial_ssd = self.ssd(&buf);
        let mut u = init;
        for it in 0..iters {
            if it > 0 {
                self.warp(target, u, &mut buf);
            }
            let (mut bx, mut by) = (0.0f32, 0.0f32);
            for k in 0..buf.len() {
                let e = buf[k] - self.template[k];
                bx += self.gx[k] * e;
                by += self.gy[k] * e;
            }
            let du = (ixx * bx + ixy * by, ixy * bx + iyy * by);
            u = (u.0 - du.0, u.1 - du.1);
            if du.0 * du.0 + du.1 * du.1 < 1e-6 {
                break;
            }
        }
        let limit = self.size as f32;
        if (u.0 - init.0).abs() > limit || (u.1 - init.1).abs() > limit || !u.0.is_finite() || !u.1.is_finite() {
            return init;
        }
        self.warp(target, u, &mut buf);
        if self.ssd(&buf) > initial_ssd {
            init
        } else {
            u
        }
    }
}

fn center(v: &mut [f32]) {
    if v.is_empty() {
        return;
    }
    let m = v.iter().sum::<f32>() / v.len() as f32;
    for x in v.iter_mut() {
        *x -= m;
    }
}

/// Fixed-iteration Jacobi smoothing attached to the densified field.
fn smooth(field: &mut Grid, iters: usize, weight: f32) {
    if iters == 0 || weight <= 0.0 {
        return;
    }
    let (w, h) = (field.width(), field.height());
    let data0 = field.data().to_vec();
    let mut cur = data0.clone();
    let mut next = vec![0.0f32; w * h];
    for _ in 0..iters {
        for y in 0..h {
            for x in 0..w {
                let k = y * w + x;
                let mut acc = 0.0;
                let mut n = 0.0;
                if x > 0 {
                    acc += cur[k - 1];
                    n += 1.0;
                }
                if x + 1 < w {
                    acc += cur[k + 1];
                    n += 1.0;
                }
                if y > 0 {
                    acc += cur[k - w];
                    n += 1.0;
                }
                if y + 1 < h {
                    acc += cur[k + w];
                    n += 1.0;
                }
                next[k] = (data0[k] + weight * acc) / (1.0 + weight * n);
            }
        }
        std::mem::swap(&mut cur, &mut next);
    }
    field.data_mut().copy_from_slice(&cur);
}
