use crate::grid::Grid;

const KERNEL: [f32; 5] = [1.0 / 16.0, 4.0 / 16.0, 6.0 / 16.0, 4.0 / 16.0, 1.0 / 16.0];

/// Separable 5-tap binomial blur with clamped borders.
pub(crate) fn blur(src: &Grid) -> Grid {
    let (w, h) = (src.width(), src.height());
    let mut tmp = Grid::new(w, h);
    for y in 0..h {
        let row = src.row(y);
        for x in 0..w {
            let mut acc = 0.0;
            for (k, &c) in KERNEL.iter().enumerate() {
                let sx = (x as isize + k as isize - 2).clamp(0, w as isize - 1) as usize;
                acc += c * row[sx];
            }
            tmp.set(x, y, acc);
        }
    }
    Grid::from_fn(w, h, |x, y| {
        KERNEL
            .iter()
            .enumerate()
            .map(|(k, &c)| c * tmp.get_clamped(x as isize, y as isize + k as isize - 2))
            .sum()
    })
}

/// Blur then keep every second sample: coarse `(x, y)` sits at fine `(2x, 2y)`.
pub(crate) fn downsample(src: &Grid) -> Grid {
    let b = blur(src);
    let (w, h) = (src.width().div_ceil(2), src.height().div_ceil(2));
    Grid::from_fn(w, h, |x, y| b.get(2 * x, 2 * y))
}

/// Levels ordered fine to coarse; level 0 is the input.
pub(crate) fn build(src: &Grid, levels: usize) -> Vec<Grid> {
    let mut out = vec![src.clone()];
    for _ in 1..levels {
        let prev = out.last().unwrap();
        if prev.width() < 4 || prev.height() < 4 {
            break;
        }
        out.push(downsample(prev));
    }
    out
}

/// Central-difference gradients with clamped borders.
pub(crate) fn gradients(src: &Grid) -> (Grid, Grid) {
    let (w, h) = (src.width(), src.height());
    let gx = Grid::from_fn(w, h, |x, y| {
        let (x, y) = (x as isize, y as isize);
        0.5 * (src.get_clamped(x + 1, y) - src.get_clamped(x - 1, y))
    });
    let gy = Grid::from_fn(w, h, |x, y| {
        let (x, y) = (x as isize, y as isize);
        0.5 * (src.get_clamped(x, y + 1) - src.get_clamped(x, y - 1))
    });
    (gx, gy)
}

/// Upsamples a coarse flow component to `w x h`, doubling its values.
pub(crate) fn upsample_flow(coarse: &Grid, w: usize, h: usize) -> Grid {
    Grid::from_fn(w, h, |x, y| 2.0 * coarse.sample_bilinear_f32(x as f32 * 0.5, y as f32 * 0.5))
}
