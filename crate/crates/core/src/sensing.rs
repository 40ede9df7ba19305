//! Scenes, sensing matrices and multilook speckle measurements.
//!
//! A look is `y_ℓ = A X_o w_ℓ + z_ℓ` with `X_o = diag(x_o)`, speckle
//! `w_ℓ ~ CN(0, σ_w² I)` and additive noise `z_ℓ ~ CN(0, σ_z² I)`. The
//! sensing matrix `A` is shared by every look.
//!
//! Complex Gaussians follow the circular convention: real and imaginary
//! parts are independent `N(0, σ²/2)`, so `E|w|² = σ²`.

use std::f64::consts::FRAC_1_SQRT_2;
use std::io::{Read, Write};
use std::path::Path;

use ndarray::{Array1, Array2, ArrayView1, Zip};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::StandardNormal;

use crate::cxla::{complex_gemm, ComplexMat};
use crate::error::{Error, Result};

/// Smallest admissible pixel value; keeps `A X² Aᴴ` positive definite when
/// there is no additive noise.
pub const DEFAULT_X_MIN: f64 = 1e-3;

/// Identifier of the random stream construction, written into every
/// serialized ensemble.
pub const RNG_ID: &str = "chacha20-seed_from_u64-stream";

/// Reproducible random stream `stream` of the generator seeded with `seed`.
/// Distinct streams are statistically independent.
pub fn stream_rng(seed: u64, stream: u64) -> ChaCha20Rng {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Derives a child seed from a parent seed and a path of indices (splitmix64).
pub fn derive_seed(seed: u64, path: &[u64]) -> u64 {
    let mut state = seed;
    for &p in path {
        state ^= p.wrapping_add(0x9E37_79B9_7F4A_7C15).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        let mut z = state.wrapping_add(0x9E37_79B9_7F4A_7C15);
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        state = z ^ (z >> 31);
    }
    state
}

fn complex_normal(rng: &mut impl Rng, sigma: f64) -> Complex64 {
    let scale = sigma * std::f64::consts::FRAC_1_SQRT_2;
    let re: f64 = rng.sample(StandardNormal);
    let im: f64 = rng.sample(StandardNormal);
    Complex64::new(scale * re, scale * im)
}

/// A grayscale scene with pixels in `[x_min, 1]`, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    height: usize,
    width: usize,
    pixels: Array1<f64>,
    x_min: f64,
}

impl Scene {
    /// Builds a scene, clipping every pixel into `[x_min, 1]`.
    pub fn new(height: usize, width: usize, pixels: Vec<f64>, x_min: f64) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::Validation("scene must be non-empty".into()));
        }
        if pixels.len() != height * width {
            return Err(Error::dim("Scene::new", height * width, pixels.len()));
        }
        if !(x_min > 0.0 && x_min < 1.0) {
            return Err(Error::Validation(format!("x_min must lie in (0, 1), got {x_min}")));
        }
        if pixels.iter().any(|v| !v.is_finite()) {
            return Err(Error::Validation("scene contains non-finite pixels".into()));
        }
        let pixels = Array1::from(pixels).mapv(|v| v.clamp(x_min, 1.0));
        Ok(Self {
            height,
            width,
            pixels,
            x_min,
        })
    }

    /// Loads an 8-bit grayscale image (PNG or PGM); pixel values become `v/255`
    /// floored at `x_min`.
    pub fn load(path: impl AsRef<Path>, x_min: f64) -> Result<Self> {
        let img = image::open(path.as_ref())?.into_luma8();
        let (w, h) = img.dimensions();
        let pixels = img.pixels().map(|p| p.0[0] as f64 / 255.0).collect();
        Self::new(h as usize, w as usize, pixels, x_min)
    }

    /// Deterministic synthetic test scene: a smooth background, several
    /// overlapping ellipses of distinct intensity and a fine stripe texture.
    pub fn phantom(height: usize, width: usize, seed: u64) -> Result<Self> {
        let mut rng = stream_rng(seed, 0);
        let n_shapes = 6;
        let shapes: Vec<(f64, f64, f64, f64, f64, f64)> = (0..n_shapes)
            .map(|_| {
                (
                    rng.random_range(0.15..0.85),
                    rng.random_range(0.15..0.85),
                    rng.random_range(0.08..0.3),
                    rng.random_range(0.08..0.3),
                    rng.random_range(0.0..std::f64::consts::PI),
                    rng.random_range(-0.45..0.45),
                )
            })
            .collect();
        let gx: f64 = rng.random_range(-0.2..0.2);
        let gy: f64 = rng.random_range(-0.2..0.2);
        let mut pixels = Vec::with_capacity(height * width);
        for i in 0..height {
            for j in 0..width {
                let y = (i as f64 + 0.5) / height as f64;
                let x = (j as f64 + 0.5) / width as f64;
                let mut v = 0.45 + gx * (x - 0.5) + gy * (y - 0.5);
                for &(cx, cy, rx, ry, theta, level) in &shapes {
                    let (s, c) = theta.sin_cos();
                    let dx = x - cx;
                    let dy = y - cy;
                    let u = (c * dx + s * dy) / rx;
                    let w = (-s * dx + c * dy) / ry;
                    if u * u + w * w <= 1.0 {
                        v += level;
                    }
                }
                if (0.6..0.9).contains(&x) && (0.1..0.35).contains(&y) {
                    v += 0.12 * ((j / 2) % 2) as f64 - 0.06;
                }
                pixels.push(v);
            }
        }
        Self::new(height, width, pixels, DEFAULT_X_MIN)
    }

    /// Scene with iid `U[x_min, 1]` pixels.
    pub fn uniform_random(height: usize, width: usize, x_min: f64, seed: u64) -> Result<Self> {
        let mut rng = stream_rng(seed, 0);
        let pixels = (0..height * width).map(|_| rng.random_range(x_min..=1.0)).collect();
        Self::new(height, width, pixels, x_min)
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn len(&self) -> usize {
        self.pixels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pixels.is_empty()
    }

    pub fn x_min(&self) -> f64 {
        self.x_min
    }

    pub fn pixels(&self) -> &Array1<f64> {
        &self.pixels
    }

    /// Pixels as an `height × width` image.
    pub fn to_image(&self) -> Array2<f64> {
        self.pixels
            .clone()
            .into_shape_with_order((self.height, self.width))
            .expect("length matches shape")
    }
}

/// Writes `pixels` (row-major, values in `[0, 1]`) as an 8-bit grayscale image.
/// The format follows the file extension (`.png` or `.pgm`).
pub fn save_image(path: impl AsRef<Path>, pixels: ArrayView1<f64>, height: usize, width: usize) -> Result<()> {
    if pixels.len() != height * width {
        return Err(Error::dim("save_image", height * width, pixels.len()));
    }
    let buf: Vec<u8> = pixels
        .iter()
        .map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
        .collect();
    let img = image::GrayImage::from_raw(width as u32, height as u32, buf)
        .ok_or_else(|| Error::Format("image buffer size".into()))?;
    img.save(path.as_ref())?;
    Ok(())
}

/// First `m` rows of a Haar-distributed `n×n` unitary matrix.
///
/// Computed as the transpose of the phase-corrected Q factor of an `n×m`
/// iid complex Gaussian matrix, which equals the first `m` columns of the
/// Q factor of the full `n×n` Gaussian matrix.
pub fn haar_partial(m: usize, n: usize, seed: u64) -> Result<ComplexMat> {
    if m == 0 || m > n {
        return Err(Error::Validation(format!("partial Haar matrix needs 1 <= m <= n, got m={m}, n={n}")));
    }
    let mut rng = stream_rng(seed, 0);
    // Column k of the Gaussian matrix lives in row k of (wr, wi).
    let mut wr = Array2::<f64>::zeros((m, n));
    let mut wi = Array2::<f64>::zeros((m, n));
    for i in 0..n {
        for k in 0..m {
            let z = complex_normal(&mut rng, 1.0);
            wr[[k, i]] = z.re;
            wi[[k, i]] = z.im;
        }
    }
    let mut vr = Array2::<f64>::zeros((m, n));
    let mut vi = Array2::<f64>::zeros((m, n));
    let mut phases = Vec::with_capacity(m);
    for k in 0..m {
        let xr = wr.row(k).to_vec();
        let xi = wi.row(k).to_vec();
        let norm = (k..n).map(|i| xr[i] * xr[i] + xi[i] * xi[i]).sum::<f64>().sqrt();
        let x0 = Complex64::new(xr[k], xi[k]);
        let phase = if x0.norm() > 0.0 { x0 / x0.norm() } else { Complex64::new(1.0, 0.0) };
        // Reflector maps x to alpha·e_k with alpha = −phase·‖x‖; R_kk = alpha.
        let alpha = -phase * norm;
        phases.push(-phase);
        let mut v: Vec<Complex64> = (k..n).map(|i| Complex64::new(xr[i], xi[i])).collect();
        v[0] -= alpha;
        let vnorm = v.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
        if vnorm == 0.0 {
            return Err(Error::numerical("degenerate Householder reflector", None));
        }
        for z in v.iter_mut() {
            *z /= vnorm;
        }
        for (off, z) in v.iter().enumerate() {
            vr[[k, k + off]] = z.re;
            vi[[k, k + off]] = z.im;
        }
        for j in k..m {
            apply_reflector(&v, k, &mut wr, &mut wi, j);
        }
    }
    // Q = H_0 ⋯ H_{m−1} [I_m; 0], applied to each unit column in turn.
    let mut qr = Array2::<f64>::zeros((m, n));
    let mut qi = Array2::<f64>::zeros((m, n));
    for j in 0..m {
        qr[[j, j]] = 1.0;
    }
    for k in (0..m).rev() {
        let v: Vec<Complex64> = (k..n).map(|i| Complex64::new(vr[[k, i]], vi[[k, i]])).collect();
        for j in k..m {
            apply_reflector(&v, k, &mut qr, &mut qi, j);
        }
    }
    // Row j of (qr, qi) is column j of Q. Multiply by the phase of R_jj so
    // that R has a positive real diagonal.
    for (j, ph) in phases.iter().enumerate() {
        for i in 0..n {
            let z = Complex64::new(qr[[j, i]], qi[[j, i]]) * ph;
            qr[[j, i]] = z.re;
            qi[[j, i]] = z.im;
        }
    }
    // A = Qᵀ: row j of A is column j of Q.
    ComplexMat::from_parts(qr, qi)
}

/// Applies `I − 2 v vᴴ` (with `v` supported on indices `k..`) to the vector
/// stored in row `j` of `(xr, xi)`.
fn apply_reflector(v: &[Complex64], k: usize, xr: &mut Array2<f64>, xi: &mut Array2<f64>, j: usize) {
    let mut rrow = xr.row_mut(j);
    let mut irow = xi.row_mut(j);
    let re = &mut rrow.as_slice_mut().expect("standard layout")[k..];
    let im = &mut irow.as_slice_mut().expect("standard layout")[k..];
    let (mut dr, mut di) = (0.0, 0.0);
    for ((vz, &a), &b) in v.iter().zip(re.iter()).zip(im.iter()) {
        // conj(v)·(a + ib)
        dr += vz.re * a + vz.im * b;
        di += vz.re * b - vz.im * a;
    }
    let (dr, di) = (2.0 * dr, 2.0 * di);
    for ((vz, a), b) in v.iter().zip(re.iter_mut()).zip(im.iter_mut()) {
        *a -= vz.re * dr - vz.im * di;
        *b -= vz.re * di + vz.im * dr;
    }
}

/// `m×n` matrix with iid standard normal entries.
pub fn gaussian_matrix(m: usize, n: usize, seed: u64) -> Array2<f64> {
    let mut rng = stream_rng(seed, 0);
    Array2::from_shape_simple_fn((m, n), || rng.sample(StandardNormal))
}

/// Sensing matrix, looks and noise levels of one acquisition.
#[derive(Debug, Clone, PartialEq)]
pub struct MeasurementEnsemble {
    a: ComplexMat,
    looks: ComplexMat,
    sigma_w: f64,
    sigma_z: f64,
    seed: u64,
    rng_id: String,
}

const MAGIC: &[u8; 8] = b"MLSPECK\0";
const FORMAT_VERSION: u32 = 1;

impl MeasurementEnsemble {
    /// Assembles an ensemble from its parts. `looks` holds one look per column.
    pub fn new(a: ComplexMat, looks: ComplexMat, sigma_w: f64, sigma_z: f64, seed: u64) -> Result<Self> {
        if looks.rows() != a.rows() {
            return Err(Error::dim("MeasurementEnsemble::new", a.rows(), looks.rows()));
        }
        if a.rows() > a.cols() {
            return Err(Error::Validation(format!(
                "expected m <= n, got m={} n={}",
                a.rows(),
                a.cols()
            )));
        }
        if looks.cols() == 0 {
            return Err(Error::Validation("at least one look is required".into()));
        }
        if !(sigma_w >= 0.0 && sigma_z >= 0.0) {
            return Err(Error::Validation("noise levels must be nonnegative".into()));
        }
        Ok(Self {
            a,
            looks,
            sigma_w,
            sigma_z,
            seed,
            rng_id: RNG_ID.to_string(),
        })
    }

    pub fn a(&self) -> &ComplexMat {
        &self.a
    }

    /// All looks, one per column (`m × L`).
    pub fn looks(&self) -> &ComplexMat {
        &self.looks
    }

    pub fn look(&self, l: usize) -> Array1<Complex64> {
        self.looks.column(l)
    }

    pub fn num_looks(&self) -> usize {
        self.looks.cols()
    }

    /// Measurements per look.
    pub fn m(&self) -> usize {
        self.a.rows()
    }

    /// Signal length.
    pub fn n(&self) -> usize {
        self.a.cols()
    }

    pub fn sigma_w(&self) -> f64 {
        self.sigma_w
    }

    pub fn sigma_z(&self) -> f64 {
        self.sigma_z
    }

    /// Standard deviations `(σ_w/√2, σ_z/√2)` of the real and imaginary
    /// parts of speckle and additive noise. The stacked vector
    /// `[Re y; Im y]` has covariance `B(x)` assembled from these.
    pub fn component_sigmas(&self) -> (f64, f64) {
        (self.sigma_w * FRAC_1_SQRT_2, self.sigma_z * FRAC_1_SQRT_2)
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn rng_id(&self) -> &str {
        &self.rng_id
    }

    /// Keeps only the first `l` looks.
    pub fn truncate_looks(&self, l: usize) -> Result<Self> {
        if l == 0 || l > self.num_looks() {
            return Err(Error::Validation(format!("cannot keep {l} of {} looks", self.num_looks())));
        }
        let re = self.looks.re().slice(ndarray::s![.., ..l]).to_owned();
        let im = self.looks.im().slice(ndarray::s![.., ..l]).to_owned();
        let mut out = self.clone();
        out.looks = ComplexMat::from_parts(re, im)?;
        Ok(out)
    }

    /// Writes the binary archive: magic, header, then little-endian `f64`
    /// planes for `Re A`, `Im A` and `Re y_ℓ`, `Im y_ℓ` for each look.
    pub fn write_to(&self, mut w: impl Write) -> Result<()> {
        w.write_all(MAGIC)?;
        w.write_all(&FORMAT_VERSION.to_le_bytes())?;
        for v in [self.m() as u64, self.n() as u64, self.num_looks() as u64] {
            w.write_all(&v.to_le_bytes())?;
        }
        w.write_all(&self.sigma_w.to_le_bytes())?;
        w.write_all(&self.sigma_z.to_le_bytes())?;
        w.write_all(&self.seed.to_le_bytes())?;
        let id = self.rng_id.as_bytes();
        w.write_all(&(id.len() as u32).to_le_bytes())?;
        w.write_all(id)?;
        let mut buf = Vec::with_capacity(8 * 2 * self.m() * (self.n() + self.num_looks()));
        for plane in [self.a.re(), self.a.im()] {
            for v in plane.iter() {
                buf.extend_from_slice(&v.to_le_bytes());
            }
        }
        for l in 0..self.num_looks() {
            for plane in [self.looks.re(), self.looks.im()] {
                for v in plane.column(l).iter() {
                    buf.extend_from_slice(&v.to_le_bytes());
                }
            }
        }
        w.write_all(&buf)?;
        Ok(())
    }

    pub fn read_from(mut r: impl Read) -> Result<Self> {
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(Error::Format("not a measurement ensemble archive".into()));
        }
        let version = read_u32(&mut r)?;
        if version != FORMAT_VERSION {
            return Err(Error::Format(format!("unsupported archive version {version}")));
        }
        let m = read_u64(&mut r)? as usize;
        let n = read_u64(&mut r)? as usize;
        let l = read_u64(&mut r)? as usize;
        let sigma_w = f64::from_le_bytes(read_array(&mut r)?);
        let sigma_z = f64::from_le_bytes(read_array(&mut r)?);
        let seed = read_u64(&mut r)?;
        let id_len = read_u32(&mut r)? as usize;
        if id_len > 1024 {
            return Err(Error::Format("corrupt RNG identifier".into()));
        }
        let mut id = vec![0u8; id_len];
        r.read_exact(&mut id)?;
        let rng_id = String::from_utf8(id).map_err(|_| Error::Format("RNG identifier is not UTF-8".into()))?;
        let mut read_plane = |rows: usize, cols: usize| -> Result<Array2<f64>> {
            let mut bytes = vec![0u8; rows * cols * 8];
            r.read_exact(&mut bytes)?;
            let vals: Vec<f64> = bytes
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                .collect();
            Ok(Array2::from_shape_vec((rows, cols), vals).expect("sized buffer"))
        };
        let are = read_plane(m, n)?;
        let aim = read_plane(m, n)?;
        let mut yr = Array2::zeros((m, l));
        let mut yi = Array2::zeros((m, l));
        for k in 0..l {
            let re = read_plane(1, m)?;
            let im = read_plane(1, m)?;
            yr.column_mut(k).assign(&re.row(0));
            yi.column_mut(k).assign(&im.row(0));
        }
        let mut ens = Self::new(
            ComplexMat::from_parts(are, aim)?,
            ComplexMat::from_parts(yr, yi)?,
            sigma_w,
            sigma_z,
            seed,
        )?;
        ens.rng_id = rng_id;
        Ok(ens)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let file = std::fs::File::create(path)?;
        self.write_to(std::io::BufWriter::new(file))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let file = std::fs::File::open(path)?;
        Self::read_from(std::io::BufReader::new(file))
    }
}

fn read_array<const N: usize>(r: &mut impl Read) -> Result<[u8; N]> {
    let mut b = [0u8; N];
    r.read_exact(&mut b)?;
    Ok(b)
}

fn read_u32(r: &mut impl Read) -> Result<u32> {
    Ok(u32::from_le_bytes(read_array(r)?))
}

fn read_u64(r: &mut impl Read) -> Result<u64> {
    Ok(u64::from_le_bytes(read_array(r)?))
}

/// Draws `L` looks `y_ℓ = A (x ∘ w_ℓ) + z_ℓ`.
///
/// Look `ℓ` draws its speckle from stream `2ℓ` and its additive noise from
/// stream `2ℓ + 1`, so every look is independent and reproducible on its own.
pub fn simulate(
    scene: ArrayView1<f64>,
    a: &ComplexMat,
    looks: usize,
    sigma_w: f64,
    sigma_z: f64,
    seed: u64,
) -> Result<MeasurementEnsemble> {
    let n = a.cols();
    let m = a.rows();
    if scene.len() != n {
        return Err(Error::dim("simulate", n, scene.len()));
    }
    if looks == 0 {
        return Err(Error::Validation("number of looks must be positive".into()));
    }
    if !(sigma_w >= 0.0 && sigma_z >= 0.0 && sigma_w.is_finite() && sigma_z.is_finite()) {
        return Err(Error::Validation("noise levels must be finite and nonnegative".into()));
    }
    // Columns of (sr, si) are x ∘ w_ℓ.
    let mut sr = Array2::<f64>::zeros((n, looks));
    let mut si = Array2::<f64>::zeros((n, looks));
    let mut zr = Array2::<f64>::zeros((m, looks));
    let mut zi = Array2::<f64>::zeros((m, looks));
    for l in 0..looks {
        let mut speckle = stream_rng(seed, 2 * l as u64);
        for i in 0..n {
            let w = complex_normal(&mut speckle, sigma_w);
            sr[[i, l]] = scene[i] * w.re;
            si[[i, l]] = scene[i] * w.im;
        }
        let mut noise = stream_rng(seed, 2 * l as u64 + 1);
        for i in 0..m {
            let z = complex_normal(&mut noise, sigma_z);
            zr[[i, l]] = z.re;
            zi[[i, l]] = z.im;
        }
    }
    let (yr, yi) = complex_gemm(a.re().view(), a.im().view(), sr.view(), si.view());
    let looks_mat = ComplexMat::from_parts(yr + zr, yi + zi)?;
    MeasurementEnsemble::new(a.clone(), looks_mat, sigma_w, sigma_z, seed)
}

/// `x_0 = (1/L) Σ_ℓ |Aᴴ y_ℓ|`, clipped to `[x_min, 1]`.
pub fn init_estimate(ens: &MeasurementEnsemble, x_min: f64) -> Array1<f64> {
    let a = ens.a();
    let y = ens.looks();
    // Aᴴ Y = (Arᵀ − i Aiᵀ)(Yr + i Yi)
    let (br, bi) = complex_gemm(
        a.re().t(),
        a.im().t().mapv(|v| -v).view(),
        y.re().view(),
        y.im().view(),
    );
    let l = ens.num_looks() as f64;
    let mut x = Zip::from(br.rows())
        .and(bi.rows())
        .map_collect(|r, i| r.iter().zip(i.iter()).map(|(a, b)| a.hypot(*b)).sum::<f64>() / l);
    x.mapv_inplace(|v| v.clamp(x_min, 1.0));
    x
}
