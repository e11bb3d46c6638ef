use alloc::vec;
use alloc::vec::Vec;

const FAR: f64 = 1e30;

/// 1-D lower envelope of the parabolas rooted at finite entries of `f`.
fn transform_1d(f: &[f64], out: &mut [f64], v: &mut [usize], z: &mut [f64]) {
    let mut k: Option<usize> = None;
    for q in 0..f.len() {
        if f[q] >= FAR {
            continue;
        }
        let Some(mut top) = k else {
            v[0] = q;
            z[0] = f64::NEG_INFINITY;
            z[1] = f64::INFINITY;
            k = Some(0);
            continue;
        };
        let mut s;
        loop {
            let p = v[top];
            s = ((f[q] + (q * q) as f64) - (f[p] + (p * p) as f64)) / (2.0 * (q - p) as f64);
            if s <= z[top] {
                // z[0] is -inf, so this never underflows
                top -= 1;
            } else {
                break;
            }
        }
        top += 1;
        v[top] = q;
        z[top] = s;
        z[top + 1] = f64::INFINITY;
        k = Some(top);
    }
    if k.is_none() {
        out.iter_mut().for_each(|o| *o = FAR);
        return;
    }
    let mut j = 0;
    for (q, o) in out.iter_mut().enumerate() {
        while z[j + 1] < q as f64 {
            j += 1;
        }
        let d = q as f64 - v[j] as f64;
        *o = d * d + f[v[j]];
    }
}

/// Exact squared Euclidean distance from every pixel to the nearest pixel
/// with `site[i] == true`. Without any site all distances are `>= 1e30`.
pub fn squared_distance_transform(width: usize, height: usize, site: &[bool]) -> Vec<f64> {
    assert_eq!(site.len(), width * height);
    let mut grid: Vec<f64> = site.iter().map(|&s| if s { 0.0 } else { FAR }).collect();
    let n = width.max(height);
    let mut f = vec![0.0; n];
    let mut out = vec![0.0; n];
    let mut v = vec![0usize; n];
    let mut z = vec![0.0; n + 1];

    for c in 0..width {
        for r in 0..height {
            f[r] = grid[r * width + c];
        }
        transform_1d(&f[..height], &mut out[..height], &mut v, &mut z);
        for r in 0..height {
            grid[r * width + c] = out[r];
        }
    }
    for r in 0..height {
        let row = &mut grid[r * width..(r + 1) * width];
        f[..width].copy_from_slice(row);
        transform_1d(&f[..width], &mut out[..width], &mut v, &mut z);
        row.copy_from_slice(&out[..width]);
    }
    grid
}
