//! Synthetic optical and resist models.
//!
//! [`simulate_aerial`] rasterizes a clip by exact pixel-area coverage and blurs
//! it with a truncated, normalized Gaussian point-spread function.
//! [`GoldenResistModel`] is the deterministic variable-threshold oracle that
//! labels every image, and [`threshold_to_cd`] slices an image at a threshold
//! to recover the printed critical dimension.
//!
//! The raster always covers the clip window exactly with
//! [`IMAGE_SIDE`]` x `[`IMAGE_SIDE`] pixels, so the window center falls on the
//! shared corner of the four central pixels. "Center" statistics are taken at
//! that point, which keeps the oracle invariant under the eight square
//! symmetries used for augmentation.

use thiserror::Error;

use crate::d4::D4;
use crate::geometry::{dbu_to_nm, Clip, Edge, DBU_PER_NM};

/// Raster edge length in pixels.
pub const IMAGE_SIDE: usize = 64;
pub const IMAGE_LEN: usize = IMAGE_SIDE * IMAGE_SIDE;
const MID: usize = IMAGE_SIDE / 2;

#[derive(Debug, Error, PartialEq)]
pub enum OpticsError {
    #[error("invalid optical model: {0}")]
    BadOptics(String),
    #[error("invalid resist model: {0}")]
    BadResist(String),
    #[error("clip edge {0} dbu is not divisible into {IMAGE_SIDE} pixels")]
    BadWindow(i64),
    #[error("row {0} outside 0..{IMAGE_SIDE}")]
    RowOutOfRange(usize),
    #[error("intensity {intensity} at the start point does not exceed threshold {threshold}")]
    DoesNotPrint { intensity: f64, threshold: f64 },
    #[error("profile never drops below threshold {threshold} on the {side} side")]
    NoCrossing { side: &'static str, threshold: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OpticalModel {
    pub blur_sigma_nm: f64,
    /// Kernel support radius in multiples of sigma.
    pub kernel_truncate: f64,
    pub peak_norm: bool,
}

impl OpticalModel {
    pub fn new(blur_sigma_nm: f64, kernel_truncate: f64, peak_norm: bool) -> Result<Self, OpticsError> {
        if !(blur_sigma_nm > 0.0 && blur_sigma_nm.is_finite()) {
            return Err(OpticsError::BadOptics(format!("blur sigma {blur_sigma_nm} must be positive")));
        }
        if !(kernel_truncate > 0.0 && kernel_truncate.is_finite()) {
            return Err(OpticsError::BadOptics(format!(
                "kernel truncation {kernel_truncate} must be positive"
            )));
        }
        Ok(Self {
            blur_sigma_nm,
            kernel_truncate,
            peak_norm,
        })
    }

    /// One-dimensional kernel in pixel steps; sums to one. The 2-D kernel is
    /// its outer product.
    pub fn kernel_1d(&self, pixel_nm: f64) -> Vec<f64> {
        let sigma_px = self.blur_sigma_nm / pixel_nm;
        let radius = (self.kernel_truncate * sigma_px).ceil() as i64;
        let mut k: Vec<f64> = (-radius..=radius)
            .map(|d| (-(d as f64).powi(2) / (2.0 * sigma_px * sigma_px)).exp())
            .collect();
        let s: f64 = k.iter().sum();
        k.iter_mut().for_each(|v| *v /= s);
        k
    }
}

/// 64 x 64 light-intensity raster over the clip window.
#[derive(Debug, Clone, PartialEq)]
pub struct AerialImage {
    /// Row-major intensities; row index grows with `y`.
    pub pixels: Vec<f32>,
    pub pixel_size: f32,
    /// Offset of the center of pixel (0, 0) from the window corner, nm.
    pub origin: f32,
}

impl AerialImage {
    pub fn new(pixels: Vec<f32>, pixel_size: f32) -> Self {
        assert_eq!(pixels.len(), IMAGE_LEN, "aerial images are {IMAGE_SIDE}x{IMAGE_SIDE}");
        Self {
            pixels,
            pixel_size,
            origin: pixel_size / 2.0,
        }
    }

    pub fn zeros(pixel_size: f32) -> Self {
        Self::new(vec![0.0; IMAGE_LEN], pixel_size)
    }

    #[inline]
    pub fn at(&self, row: usize, col: usize) -> f32 {
        self.pixels[row * IMAGE_SIDE + col]
    }

    /// Window center, nm from the window corner.
    pub fn center_nm(&self) -> f64 {
        MID as f64 * self.pixel_size as f64
    }

    pub fn transformed(&self, g: D4) -> AerialImage {
        AerialImage {
            pixels: g.transform_square(&self.pixels, IMAGE_SIDE),
            pixel_size: self.pixel_size,
            origin: self.origin,
        }
    }

    /// Euclidean (Frobenius) norm of the pixel grid.
    pub fn norm(&self) -> f64 {
        self.pixels.iter().map(|&p| (p as f64).powi(2)).sum::<f64>().sqrt()
    }

    /// Intensity at the window center (bilinear, the mean of the central 2x2).
    pub fn center_intensity(&self) -> f64 {
        let s = self.at(MID - 1, MID - 1) as f64
            + self.at(MID - 1, MID) as f64
            + self.at(MID, MID - 1) as f64
            + self.at(MID, MID) as f64;
        s / 4.0
    }

    /// Central-difference gradient magnitude at the window center, per pixel.
    pub fn center_gradient(&self) -> f64 {
        let (bl, br) = (self.at(MID - 1, MID - 1) as f64, self.at(MID - 1, MID) as f64);
        let (tl, tr) = (self.at(MID, MID - 1) as f64, self.at(MID, MID) as f64);
        let gx = (br + tr - bl - tl) / 2.0;
        let gy = (tl + tr - bl - br) / 2.0;
        gx.hypot(gy)
    }

    /// Mean over the central `window x window` block.
    pub fn center_window_mean(&self, window: usize) -> f64 {
        let lo = MID - window / 2;
        let mut s = 0.0;
        for r in lo..lo + window {
            for c in lo..lo + window {
                s += self.at(r, c) as f64;
            }
        }
        s / (window * window) as f64
    }
}

/// Rasterizes contacts by exact area coverage, blurs, and optionally
/// normalizes the peak to one.
pub fn simulate_aerial(clip: &Clip, optics: &OpticalModel) -> Result<AerialImage, OpticsError> {
    let size = clip.rule.clip_size();
    if size % IMAGE_SIDE as i64 != 0 {
        return Err(OpticsError::BadWindow(size));
    }
    let px = size / IMAGE_SIDE as i64;
    let mut coverage = vec![0.0f64; IMAGE_LEN];
    let overlap = |a0: i64, a1: i64, p: i64| -> i64 { (a1.min((p + 1) * px) - a0.max(p * px)).max(0) };
    for k in &clip.contacts {
        let (x0, x1, y0, y1) = (k.x0().max(0), k.x1().min(size), k.y0().max(0), k.y1().min(size));
        if x0 >= x1 || y0 >= y1 {
            continue;
        }
        let (c0, c1) = ((x0 / px) as usize, ((x1 - 1) / px) as usize);
        let (r0, r1) = ((y0 / px) as usize, ((y1 - 1) / px) as usize);
        for r in r0..=r1 {
            let oy = overlap(y0, y1, r as i64);
            for c in c0..=c1 {
                let ox = overlap(x0, x1, c as i64);
                coverage[r * IMAGE_SIDE + c] += (ox * oy) as f64 / (px * px) as f64;
            }
        }
    }
    let pixel_nm = px as f64 / DBU_PER_NM as f64;
    let blurred = blur(&coverage, &optics.kernel_1d(pixel_nm));
    let peak = blurred.iter().cloned().fold(0.0f64, f64::max);
    let scale = if optics.peak_norm && peak > 0.0 { 1.0 / peak } else { 1.0 };
    let pixels = blurred.iter().map(|&v| (v * scale) as f32).collect();
    Ok(AerialImage::new(pixels, pixel_nm as f32))
}

/// Separable zero-padded convolution: rows first, then columns.
fn blur(src: &[f64], kernel: &[f64]) -> Vec<f64> {
    let n = IMAGE_SIDE as i64;
    let r = (kernel.len() / 2) as i64;
    let mut tmp = vec![0.0; IMAGE_LEN];
    for row in 0..n {
        for col in 0..n {
            let mut acc = 0.0;
            for (t, w) in kernel.iter().enumerate() {
                let c = col + t as i64 - r;
                if (0..n).contains(&c) {
                    acc += w * src[(row * n + c) as usize];
                }
            }
            tmp[(row * n + col) as usize] = acc;
        }
    }
    let mut out = vec![0.0; IMAGE_LEN];
    for row in 0..n {
        for col in 0..n {
            let mut acc = 0.0;
            for (t, w) in kernel.iter().enumerate() {
                let rr = row + t as i64 - r;
                if (0..n).contains(&rr) {
                    acc += w * tmp[(rr * n + col) as usize];
                }
            }
            out[(row * n + col) as usize] = acc;
        }
    }
    out
}

/// Variable-threshold oracle:
///
/// `clamp(c0 + c1*I + c2*(mean_W - I) + c3*|grad I|, clamp_lo, clamp_hi)`
///
/// with `I` and `grad I` evaluated at the window center and `mean_W` the mean
/// of the central `window x window` pixels.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GoldenResistModel {
    pub c: [f64; 4],
    pub window: usize,
    pub clamp_lo: f64,
    pub clamp_hi: f64,
}

impl GoldenResistModel {
    pub fn new(c: [f64; 4], window: usize, clamp_lo: f64, clamp_hi: f64) -> Result<Self, OpticsError> {
        if c.iter().any(|v| !v.is_finite()) {
            return Err(OpticsError::BadResist("coefficients must be finite".into()));
        }
        if window < 2 || !window.is_multiple_of(2) || window > IMAGE_SIDE {
            return Err(OpticsError::BadResist(format!(
                "window {window} must be even and within 2..={IMAGE_SIDE}"
            )));
        }
        if !(clamp_lo < clamp_hi) {
            return Err(OpticsError::BadResist(format!(
                "clamp range [{clamp_lo}, {clamp_hi}] is empty"
            )));
        }
        Ok(Self {
            c,
            window,
            clamp_lo,
            clamp_hi,
        })
    }

    /// Default material A: c = (0.30, 0.20, -0.10, 0.05), clamp [0.10, 0.60],
    /// 16-pixel window.
    pub fn material_a() -> Self {
        Self::new([0.30, 0.20, -0.10, 0.05], 16, 0.10, 0.60).expect("valid defaults")
    }

    /// Same resist with the intensity slope `c1` scaled by `factor`.
    pub fn with_slope_scaled(&self, factor: f64) -> Self {
        let mut out = *self;
        out.c[1] *= factor;
        out
    }

    /// Threshold before clamping.
    pub fn raw_threshold(&self, image: &AerialImage) -> f64 {
        let i = image.center_intensity();
        let mean = image.center_window_mean(self.window);
        let grad = image.center_gradient();
        let [c0, c1, c2, c3] = self.c;
        c0 + c1 * i + c2 * (mean - i) + c3 * grad
    }

    /// Lipschitz constant of the oracle with respect to the Euclidean norm
    /// of the image: the norm of the linear part's weight vector plus `|c3|`
    /// (the gradient map has orthonormal rows). Clamping is 1-Lipschitz.
    pub fn lipschitz_constant(&self) -> f64 {
        let [_, c1, c2, c3] = self.c;
        let area = (self.window * self.window) as f64;
        let center_w = (c1 - c2) / 4.0 + c2 / area;
        let other_w = c2 / area;
        let linear = (4.0 * center_w * center_w + (area - 4.0) * other_w * other_w).sqrt();
        linear + c3.abs()
    }
}

/// Golden threshold label for an image.
pub fn golden_threshold(image: &AerialImage, resist: &GoldenResistModel) -> f32 {
    resist.raw_threshold(image).clamp(resist.clamp_lo, resist.clamp_hi) as f32
}

/// Recenters the window on the midpoint of one edge of the center contact.
/// Contacts that no longer fit the window are dropped.
pub fn shift_clip_window(clip: &Clip, edge: Edge) -> Clip {
    let half_w = clip.rule.contact_width() / 2;
    let (ux, uy) = edge.inward();
    clip.translated(ux * half_w, uy * half_w)
}

/// One raster row with physical x coordinates (nm, pixel centers).
pub fn extract_profile(image: &AerialImage, row: usize) -> Result<Vec<(f64, f32)>, OpticsError> {
    if row >= IMAGE_SIDE {
        return Err(OpticsError::RowOutOfRange(row));
    }
    Ok((0..IMAGE_SIDE)
        .map(|c| {
            (
                image.origin as f64 + c as f64 * image.pixel_size as f64,
                image.at(row, c),
            )
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Axis {
    X,
    Y,
}

/// Profile along the window's center line: the mean of the two central
/// rows (axis X) or columns (axis Y).
pub fn center_line(image: &AerialImage, axis: Axis) -> Vec<f64> {
    (0..IMAGE_SIDE)
        .map(|k| match axis {
            Axis::X => (image.at(MID - 1, k) as f64 + image.at(MID, k) as f64) / 2.0,
            Axis::Y => (image.at(k, MID - 1) as f64 + image.at(k, MID) as f64) / 2.0,
        })
        .collect()
}

/// Printed width on a sampled line, walking outward from `start_nm` to the
/// first sub-threshold sample on each side and interpolating linearly.
pub fn cd_on_line(line: &[f64], pixel_nm: f64, start_nm: f64, threshold: f64) -> Result<f64, OpticsError> {
    let x_of = |k: usize| (k as f64 + 0.5) * pixel_nm;
    let n = line.len();
    // intensity at the start point, interpolated between bracketing samples
    let pos = start_nm / pixel_nm - 0.5;
    let k0 = pos.floor().clamp(0.0, (n - 2) as f64) as usize;
    let frac = (pos - k0 as f64).clamp(0.0, 1.0);
    let start_i = line[k0] + frac * (line[k0 + 1] - line[k0]);
    if !(start_i > threshold) {
        return Err(OpticsError::DoesNotPrint {
            intensity: start_i,
            threshold,
        });
    }
    let crossing = |(xa, ia): (f64, f64), (xb, ib): (f64, f64)| xa + (ia - threshold) / (ia - ib) * (xb - xa);

    let mut prev = (start_nm, start_i);
    let mut right = None;
    for k in (0..n).filter(|&k| x_of(k) > start_nm) {
        let cur = (x_of(k), line[k]);
        if cur.1 < threshold {
            right = Some(crossing(prev, cur));
            break;
        }
        prev = cur;
    }
    let right = right.ok_or(OpticsError::NoCrossing {
        side: "right",
        threshold,
    })?;

    let mut prev = (start_nm, start_i);
    let mut left = None;
    for k in (0..n).rev().filter(|&k| x_of(k) < start_nm) {
        let cur = (x_of(k), line[k]);
        if cur.1 < threshold {
            left = Some(crossing(prev, cur));
            break;
        }
        prev = cur;
    }
    let left = left.ok_or(OpticsError::NoCrossing {
        side: "left",
        threshold,
    })?;
    Ok(right - left)
}

/// CD along the horizontal center line, walking out from the window center.
pub fn threshold_to_cd(image: &AerialImage, threshold: f32) -> Result<f64, OpticsError> {
    cd_on_line(
        &center_line(image, Axis::X),
        image.pixel_size as f64,
        image.center_nm(),
        threshold as f64,
    )
}

/// CD of the center contact of an edge sample.
///
/// The sample window is centered on the edge midpoint, so the contact center
/// sits half a contact width inward from it, after the sample's symmetry
/// transform. The width is measured across the contact along that direction.
pub fn edge_sample_cd(
    image: &AerialImage,
    threshold: f32,
    edge: Edge,
    aug: D4,
    contact_width_dbu: i64,
) -> Result<f64, OpticsError> {
    let half = dbu_to_nm(contact_width_dbu) / 2.0;
    let (ux, uy) = edge.inward();
    let (dx, dy) = aug.apply_f64((ux as f64 * half, uy as f64 * half));
    let (axis, offset) = if dx.abs() > dy.abs() { (Axis::X, dx) } else { (Axis::Y, dy) };
    cd_on_line(
        &center_line(image, axis),
        image.pixel_size as f64,
        image.center_nm() + offset,
        threshold as f64,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{gen_contact_array, gen_random_positions, Contact, DesignRule};

    fn n10() -> DesignRule {
        DesignRule::with_pitch_nm(64.0).unwrap()
    }

    fn optics() -> OpticalModel {
        OpticalModel::new(35.0, 3.0, true).unwrap()
    }

    fn single(rule: &DesignRule) -> Clip {
        gen_contact_array(rule, 1, 1, rule.min_pitch(), rule.min_pitch()).unwrap()
    }

    #[test]
    fn kernel_sums_to_one() {
        let k = optics().kernel_1d(31.25);
        assert!((k.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert_eq!(k.len() % 2, 1);
    }

    #[test]
    fn empty_clip_gives_zero_image() {
        let clip = Clip::new(n10(), vec![]);
        let img = simulate_aerial(&clip, &optics()).unwrap();
        assert!(img.pixels.iter().all(|&p| p == 0.0));
    }

    #[test]
    fn single_contact_peaks_at_center() {
        let img = simulate_aerial(&single(&n10()), &optics()).unwrap();
        let max = img.pixels.iter().cloned().fold(f32::MIN, f32::max);
        assert_eq!(max, 1.0);
        for r in [MID - 1, MID] {
            for c in [MID - 1, MID] {
                assert_eq!(img.at(r, c), max);
            }
        }
        assert!(img.pixels.iter().all(|&p| (0.0..=1.0).contains(&p)));
    }

    #[test]
    fn simulation_is_deterministic() {
        let clip = gen_random_positions(&n10(), 40, 5, 10_000);
        assert_eq!(
            simulate_aerial(&clip, &optics()).unwrap(),
            simulate_aerial(&clip, &optics()).unwrap()
        );
    }

    #[test]
    fn simulation_commutes_with_symmetries() {
        let clip = gen_random_positions(&n10(), 60, 11, 10_000);
        let base = simulate_aerial(&clip, &optics()).unwrap();
        for g in D4::all() {
            let a = simulate_aerial(&clip.transformed(g), &optics()).unwrap();
            let b = base.transformed(g);
            for (x, y) in a.pixels.iter().zip(&b.pixels) {
                assert!((x - y).abs() <= 1e-6, "{g}: {x} vs {y}");
            }
        }
    }

    #[test]
    fn oracle_constant_images() {
        let resist = GoldenResistModel::material_a();
        assert_eq!(golden_threshold(&AerialImage::zeros(31.25), &resist), 0.3);
        let ones = AerialImage::new(vec![1.0; IMAGE_LEN], 31.25);
        assert!((golden_threshold(&ones, &resist) - 0.5).abs() < 1e-7);
    }

    #[test]
    fn oracle_is_symmetry_invariant() {
        let clip = gen_random_positions(&n10(), 60, 2, 10_000);
        let img = simulate_aerial(&shift_clip_window(&clip, Edge::Left), &optics()).unwrap();
        let resist = GoldenResistModel::material_a();
        let t0 = resist.raw_threshold(&img);
        for g in D4::all() {
            assert!((resist.raw_threshold(&img.transformed(g)) - t0).abs() < 1e-12);
        }
    }

    #[test]
    fn material_b_shifts_by_slope_term() {
        let clip = gen_random_positions(&n10(), 60, 4, 10_000);
        let img = simulate_aerial(&shift_clip_window(&clip, Edge::Top), &optics()).unwrap();
        let a = GoldenResistModel::material_a();
        let b = a.with_slope_scaled(1.2);
        let diff = b.raw_threshold(&img) - a.raw_threshold(&img);
        let want = 0.2 * a.c[1] * img.center_intensity();
        assert!((diff - want).abs() < 1e-12);
    }

    #[test]
    fn oracle_lipschitz_single_pixel_dependence() {
        let r = GoldenResistModel::new([0.1, 0.8, 0.0, 0.0], 16, -10.0, 10.0).unwrap();
        // the center value averages four pixels
        assert!((r.lipschitz_constant() - 0.4).abs() < 1e-12);
    }

    #[test]
    fn resist_validation() {
        assert!(GoldenResistModel::new([0.0; 4], 15, 0.0, 1.0).is_err());
        assert!(GoldenResistModel::new([0.0; 4], 16, 1.0, 1.0).is_err());
        assert!(OpticalModel::new(0.0, 3.0, true).is_err());
    }

    #[test]
    fn shift_moves_edge_to_center() {
        let rule = n10();
        let clip = single(&rule);
        let half = rule.contact_width() / 2;
        let left = shift_clip_window(&clip, Edge::Left);
        assert_eq!(left.contacts[0].cx, rule.center() + half);
        assert_eq!(left.contacts[0].x0(), rule.center());
        for e in Edge::ALL {
            assert_eq!(shift_clip_window(&clip, e).contacts.len(), 1);
        }
        // one contact hugging each horizontal window border
        let c = rule.center();
        let mut hug = clip.contacts.clone();
        hug.push(Contact { cx: c, cy: half + 8, width: rule.contact_width() });
        hug.push(Contact { cx: c, cy: rule.clip_size() - half - 8, width: rule.contact_width() });
        let arr = Clip::new(rule, hug);
        let back = shift_clip_window(&shift_clip_window(&arr, Edge::Top), Edge::Bottom);
        // the bottom contact leaves the window on the way down and is not restored
        assert_eq!(back.contacts.len(), arr.contacts.len() - 1);
        assert!(back.contacts.iter().all(|k| arr.contacts.contains(k)));
    }

    #[test]
    fn profile_bounds_and_symmetry() {
        let ones = AerialImage::new(vec![1.0; IMAGE_LEN], 31.25);
        let p = extract_profile(&ones, 32).unwrap();
        assert_eq!(p.len(), IMAGE_SIDE);
        assert!(p.iter().all(|&(_, v)| v == 1.0));
        assert_eq!(p[0].0, 15.625);
        assert_eq!(extract_profile(&ones, 64), Err(OpticsError::RowOutOfRange(64)));

        let img = simulate_aerial(&single(&n10()), &optics()).unwrap();
        let row = extract_profile(&img, MID).unwrap();
        for k in 0..IMAGE_SIDE {
            assert!((row[k].1 - row[IMAGE_SIDE - 1 - k].1).abs() <= 1e-6);
        }
    }

    #[test]
    fn cd_requires_printing() {
        let img = simulate_aerial(&single(&n10()), &optics()).unwrap();
        assert!(matches!(
            threshold_to_cd(&img, 1.5),
            Err(OpticsError::DoesNotPrint { .. })
        ));
        let ones = AerialImage::new(vec![1.0; IMAGE_LEN], 31.25);
        assert!(matches!(threshold_to_cd(&ones, 0.5), Err(OpticsError::NoCrossing { .. })));
    }

    #[test]
    fn cd_is_monotone_in_threshold() {
        let img = simulate_aerial(&single(&n10()), &optics()).unwrap();
        let mut last = f64::INFINITY;
        for k in 1..40 {
            let t = k as f32 * 0.025;
            let cd = threshold_to_cd(&img, t).unwrap();
            assert!(cd <= last);
            last = cd;
        }
    }

    #[test]
    fn edge_cd_matches_unshifted_contact() {
        // without peak normalization the shifted images are exact translates,
        // so only interpolation error separates the two measurements
        let rule = n10();
        let clip = single(&rule);
        let raw = OpticalModel::new(35.0, 3.0, false).unwrap();
        let img = simulate_aerial(&clip, &raw).unwrap();
        let t = 0.5 * img.pixels.iter().cloned().fold(0.0f32, f32::max);
        let direct = threshold_to_cd(&img, t).unwrap();
        for edge in Edge::ALL {
            let shifted = simulate_aerial(&shift_clip_window(&clip, edge), &raw).unwrap();
            for g in D4::all() {
                let cd = edge_sample_cd(&shifted.transformed(g), t, edge, g, rule.contact_width()).unwrap();
                // shifting by 16 nm moves the samples relative to the contact, so
                // only interpolation error separates the two measurements
                assert!((cd - direct).abs() < 3.0, "{edge:?} {g}: {cd} vs {direct}");
            }
        }
    }
}
