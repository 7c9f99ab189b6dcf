//! Small raster helpers shared by the generator and the augmentations.

/// Separable Gaussian blur of one planar channel, clamping at the borders.
pub(crate) fn gaussian_blur(plane: &mut [f32], h: usize, w: usize, sigma: f32) {
    if sigma <= 0.0 {
        return;
    }
    let radius = (3.0 * sigma).ceil() as isize;
    let kernel: Vec<f32> = (-radius..=radius).map(|i| (-(i * i) as f32 / (2.0 * sigma * sigma)).exp()).collect();
    let norm: f32 = kernel.iter().sum();
    let kernel: Vec<f32> = kernel.iter().map(|k| k / norm).collect();
    let mut tmp = vec![0.0; h * w];
    for r in 0..h {
        for c in 0..w {
            let mut acc = 0.0;
            for (j, k) in kernel.iter().enumerate() {
                let cc = (c as isize + j as isize - radius).clamp(0, w as isize - 1) as usize;
                acc += k * plane[r * w + cc];
            }
            tmp[r * w + c] = acc;
        }
    }
    for r in 0..h {
        for c in 0..w {
            let mut acc = 0.0;
            for (j, k) in kernel.iter().enumerate() {
                let rr = (r as isize + j as isize - radius).clamp(0, h as isize - 1) as usize;
                acc += k * tmp[rr * w + c];
            }
            plane[r * w + c] = acc;
        }
    }
}

/// Bilinear sample of a channel-last buffer at fractional `(y, x)`;
/// samples outside the image read as `fill`.
pub(crate) fn bilinear(px: &[f32], h: usize, w: usize, c: usize, y: f32, x: f32, ch: usize, fill: f32) -> f32 {
    let y0 = y.floor();
    let x0 = x.floor();
    let (fy, fx) = (y - y0, x - x0);
    let at = |r: isize, q: isize| -> f32 {
        if r < 0 || q < 0 || r >= h as isize || q >= w as isize {
            fill
        } else {
            px[(r as usize * w + q as usize) * c + ch]
        }
    };
    let (r, q) = (y0 as isize, x0 as isize);
    let top = at(r, q) * (1.0 - fx) + at(r, q + 1) * fx;
    let bottom = at(r + 1, q) * (1.0 - fx) + at(r + 1, q + 1) * fx;
    top * (1.0 - fy) + bottom * fy
}

/// Smooth value noise in roughly `[-1, 1]`: random lattice values at
/// `cells x cells` resolution, interpolated with a smoothstep.
pub(crate) fn value_noise<R: rand::Rng + ?Sized>(h: usize, w: usize, cells: usize, rng: &mut R) -> Vec<f32> {
    let n = cells + 2;
    let lattice: Vec<f32> = (0..n * n).map(|_| rng.gen_range(-1.0f32..1.0)).collect();
    let mut out = vec![0.0; h * w];
    for r in 0..h {
        let gy = r as f32 / h as f32 * cells as f32;
        let (iy, ty) = (gy.floor() as usize, smoothstep(gy.fract()));
        for c in 0..w {
            let gx = c as f32 / w as f32 * cells as f32;
            let (ix, tx) = (gx.floor() as usize, smoothstep(gx.fract()));
            let v00 = lattice[iy * n + ix];
            let v01 = lattice[iy * n + ix + 1];
            let v10 = lattice[(iy + 1) * n + ix];
            let v11 = lattice[(iy + 1) * n + ix + 1];
            let top = v00 + (v01 - v00) * tx;
            let bottom = v10 + (v11 - v10) * tx;
            out[r * w + c] = top + (bottom - top) * ty;
        }
    }
    out
}

fn smoothstep(t: f32) -> f32 {
    t * t * (3.0 - 2.0 * t)
}

/// Euclidean distance from every foreground pixel to the nearest background
/// pixel, searched within `reach` pixels (farther values saturate at
/// `reach + 1`). Background pixels get 0.
pub(crate) fn distance_to_background(fg: &[bool], h: usize, w: usize, reach: usize) -> Vec<f32> {
    let reach = reach as isize;
    let mut out = vec![0.0; h * w];
    for r in 0..h as isize {
        for c in 0..w as isize {
            if !fg[(r * w as isize + c) as usize] {
                continue;
            }
            let mut best = ((reach + 1) * (reach + 1)) as f32;
            for dr in -reach..=reach {
                for dc in -reach..=reach {
                    let d2 = (dr * dr + dc * dc) as f32;
                    if d2 >= best {
                        continue;
                    }
                    let (rr, cc) = (r + dr, c + dc);
                    let outside = rr < 0 || cc < 0 || rr >= h as isize || cc >= w as isize;
                    if outside || !fg[(rr * w as isize + cc) as usize] {
                        best = d2;
                    }
                }
            }
            out[(r * w as isize + c) as usize] = best.sqrt();
        }
    }
    out
}

/// Zhang-Suen thinning to an 8-connected one-pixel skeleton.
pub(crate) fn skeletonize(fg: &[bool], h: usize, w: usize) -> Vec<bool> {
    let mut img = fg.to_vec();
    let at = |img: &[bool], r: isize, c: isize| -> bool {
        r >= 0 && c >= 0 && r < h as isize && c < w as isize && img[r as usize * w + c as usize]
    };
    loop {
        let mut changed = false;
        for pass in 0..2 {
            let mut remove = Vec::new();
            for r in 0..h as isize {
                for c in 0..w as isize {
                    if !img[r as usize * w + c as usize] {
                        continue;
                    }
                    // P2..P9 clockwise from north.
                    let p = [
                        at(&img, r - 1, c),
                        at(&img, r - 1, c + 1),
                        at(&img, r, c + 1),
                        at(&img, r + 1, c + 1),
                        at(&img, r + 1, c),
                        at(&img, r + 1, c - 1),
                        at(&img, r, c - 1),
                        at(&img, r - 1, c - 1),
                    ];
                    let b = p.iter().filter(|&&v| v).count();
                    if !(2..=6).contains(&b) {
                        continue;
                    }
                    let a = (0..8).filter(|&i| !p[i] && p[(i + 1) % 8]).count();
                    if a != 1 {
                        continue;
                    }
                    let (p2, p4, p6, p8) = (p[0], p[2], p[4], p[6]);
                    let ok = if pass == 0 { !(p2 && p4 && p6) && !(p4 && p6 && p8) } else { !(p2 && p4 && p8) && !(p2 && p6 && p8) };
                    if ok {
                        remove.push(r as usize * w + c as usize);
                    }
                }
            }
            changed |= !remove.is_empty();
            for i in remove {
                img[i] = false;
            }
        }
        if !changed {
            return img;
        }
    }
}

/// Number of 8-connected foreground components.
pub(crate) fn count_components(fg: &[bool], h: usize, w: usize) -> usize {
    let mut seen = vec![false; h * w];
    let mut count = 0;
    let mut stack = Vec::new();
    for start in 0..h * w {
        if !fg[start] || seen[start] {
            continue;
        }
        count += 1;
        seen[start] = true;
        stack.push(start);
        while let Some(i) = stack.pop() {
            let (r, c) = ((i / w) as isize, (i % w) as isize);
            for dr in -1..=1 {
                for dc in -1..=1 {
                    let (rr, cc) = (r + dr, c + dc);
                    if rr < 0 || cc < 0 || rr >= h as isize || cc >= w as isize {
                        continue;
                    }
                    let j = rr as usize * w + cc as usize;
                    if fg[j] && !seen[j] {
                        seen[j] = true;
                        stack.push(j);
                    }
                }
            }
        }
    }
    count
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn blur_preserves_constants() {
        let mut p = vec![0.3; 100];
        gaussian_blur(&mut p, 10, 10, 1.5);
        assert!(p.iter().all(|v| (v - 0.3).abs() < 1e-6));
    }

    #[test]
    fn bilinear_hits_lattice_points_exactly() {
        let px: Vec<f32> = (0..12).map(|v| v as f32).collect();
        assert_eq!(bilinear(&px, 3, 4, 1, 1.0, 2.0, 0, 0.0), 6.0);
        assert_eq!(bilinear(&px, 3, 4, 1, 0.5, 0.0, 0, 0.0), 2.0);
        assert_eq!(bilinear(&px, 3, 4, 1, -1.0, 0.0, 0, 9.0), 9.0);
    }

    #[test]
    fn distance_of_a_four_pixel_band() {
        let (h, w) = (9, 8);
        let fg: Vec<bool> = (0..h * w).map(|i| (3..7).contains(&(i % w)) && i / w > 0 && i / w < 8).collect();
        let d = distance_to_background(&fg, h, w, 6);
        assert_eq!(d[4 * w + 3], 1.0);
        assert_eq!(d[4 * w + 4], 2.0);
        assert_eq!(d[4 * w + 1], 0.0);
    }

    #[test]
    fn skeleton_of_band_is_thin_and_connected() {
        let (h, w) = (20, 12);
        let fg: Vec<bool> = (0..h * w).map(|i| (4..8).contains(&(i % w)) && (2..18).contains(&(i / w))).collect();
        let sk = skeletonize(&fg, h, w);
        for r in 5..15 {
            let n = (0..w).filter(|&c| sk[r * w + c]).count();
            assert_eq!(n, 1, "row {r}");
        }
        assert_eq!(count_components(&sk, h, w), 1);
        assert!(sk.iter().zip(&fg).all(|(s, f)| !s || *f));
    }

    #[test]
    fn components_use_eight_connectivity() {
        let fg = vec![true, false, false, false, true, false, false, false, true];
        assert_eq!(count_components(&fg, 3, 3), 1);
        let fg = vec![true, false, true, false, false, false, true, false, true];
        assert_eq!(count_components(&fg, 3, 3), 4);
    }
}
