//! Exhaustive integer-displacement SSD search. Slow; used as a reference.

use super::{densify, patch_origins, FlowConfig};
use crate::grid::Grid;

pub(crate) fn estimate(reference: &Grid, target: &Grid, cfg: &FlowConfig) -> (Grid, Grid) {
    let (w, h) = (reference.width(), reference.height());
    let ps = cfg.patch_size.min(w).min(h);
    let stride = cfg.patch_stride.min(ps);
    let r = cfg.search_radius as isize;
    let origins = patch_origins(w, h, ps, stride);
    let disp: Vec<(f32, f32)> = origins
        .iter()
        .map(|&(px, py)| {
            let mut best = (f32::INFINITY, 0isize, 0isize);
            for dy in -r..=r {
                for dx in -r..=r {
                    let mut ssd = 0.0f32;
                    for j in 0..ps {
                        for i in 0..ps {
                            let (x, y) = ((px + i) as isize, (py + j) as isize);
                            let d = target.get_clamped(x + dx, y + dy) - reference.get(x as usize, y as usize);
                            ssd += d * d;
                        }
                    }
                    // Ties go to the smaller displacement.
                    let better = ssd < best.0
                        || (ssd == best.0 && dx * dx + dy * dy < best.1 * best.1 + best.2 * best.2);
                    if better {
                        best = (ssd, dx, dy);
                    }
                }
            }
            (best.1 as f32, best.2 as f32)
        })
        .collect();
    densify(reference, target, &origins, ps, &disp)
}
