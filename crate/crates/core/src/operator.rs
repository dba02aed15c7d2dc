//! The lensless measurement operator `A`: per-channel circular convolution
//! with a PSF, diagonalized by the 2-D DFT.

use rustfft::num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fft::Fft2;
use crate::parallel::{self, Exec};
use crate::tensor::{Dims, ImageTensor};

/// Default relative threshold below which a transfer bin counts as null space.
pub const DEFAULT_SPECTRAL_REL_EPS: f64 = 1e-6;
/// Default Wiener regularization for the pseudo-inverse used by guidance.
pub const DEFAULT_LAMBDA_W: f64 = 1e-2;

/// A nonnegative point spread function, stored with its optical center at
/// `(kh/2, kw/2)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Psf {
    kernel: ImageTensor,
    normalized: bool,
}

impl Psf {
    /// Validates nonnegativity; with `normalize`, rescales each channel to sum to one.
    pub fn new(kernel: ImageTensor, normalize: bool) -> Result<Self> {
        if let Some(pos) = kernel.as_slice().iter().position(|&v| v < 0.0) {
            return Err(Error::Parameter(format!(
                "PSF entries must be nonnegative (element {pos} is negative)"
            )));
        }
        let kernel = if normalize {
            let c = kernel.channels();
            let mut sums = vec![0.0; c];
            for (n, v) in kernel.as_slice().iter().enumerate() {
                sums[n % c] += v;
            }
            if let Some(k) = sums.iter().position(|&s| s <= 0.0) {
                return Err(Error::Parameter(format!(
                    "PSF channel {k} sums to zero and cannot be normalized"
                )));
            }
            let data = kernel
                .as_slice()
                .iter()
                .enumerate()
                .map(|(n, v)| v / sums[n % c])
                .collect();
            ImageTensor::new(kernel.dims(), data)?
        } else {
            kernel
        };
        Ok(Self {
            kernel,
            normalized: normalize,
        })
    }

    /// Single-pixel unit impulse.
    pub fn delta() -> Self {
        Self {
            kernel: ImageTensor::filled(Dims::new(1, 1, 1), 1.0).expect("1x1 kernel"),
            normalized: true,
        }
    }

    pub fn kernel(&self) -> &ImageTensor {
        &self.kernel
    }

    pub fn is_normalized(&self) -> bool {
        self.normalized
    }

    /// Optical center used when the kernel is placed at the origin.
    pub fn center(&self) -> (usize, usize) {
        (self.kernel.height() / 2, self.kernel.width() / 2)
    }
}

/// Circulant convolution operator with cached per-channel transfer functions.
#[derive(Debug, Clone)]
pub struct ConvolutionOperator {
    dims: Dims,
    fft: Fft2,
    /// Kernel planes zero-padded to the image size and circularly shifted so
    /// the PSF center sits at index (0, 0).
    origin_kernels: Vec<Vec<f64>>,
    transfer: Vec<Vec<Complex64>>,
    transfer_conj: Vec<Vec<Complex64>>,
    /// Every kernel plane is a unit impulse at the origin.
    identity: bool,
}

impl ConvolutionOperator {
    /// Builds `A` for images of shape `dims`.
    ///
    /// A kernel smaller than the image is zero-padded and circularly shifted
    /// so that its center `(kh/2, kw/2)` lands on the origin. Single-channel
    /// kernels are shared by every image channel.
    pub fn new(psf: &Psf, dims: Dims) -> Result<Self> {
        dims.validate()?;
        let k = psf.kernel();
        if k.height() > dims.height || k.width() > dims.width {
            return Err(Error::Dimension(format!(
                "PSF {} is larger than image {}",
                k.dims(),
                dims
            )));
        }
        if k.channels() != 1 && k.channels() != dims.channels {
            return Err(Error::Dimension(format!(
                "PSF has {} channels, image has {}",
                k.channels(),
                dims.channels
            )));
        }
        let (ch, cw) = psf.center();
        let (h, w) = (dims.height, dims.width);
        let fft = Fft2::new(h, w);
        let mut origin_kernels = Vec::with_capacity(dims.channels);
        for c in 0..dims.channels {
            let kc = if k.channels() == 1 { 0 } else { c };
            let mut plane = vec![0.0; h * w];
            for a in 0..k.height() {
                for b in 0..k.width() {
                    let i = (a + h - ch) % h;
                    let j = (b + w - cw) % w;
                    plane[i * w + j] = k.get(a, b, kc);
                }
            }
            origin_kernels.push(plane);
        }
        let identity = origin_kernels
            .iter()
            .all(|p| p[0] == 1.0 && p[1..].iter().all(|&v| v == 0.0));
        let transfer: Vec<Vec<Complex64>> =
            origin_kernels.iter().map(|p| fft.forward_real(p)).collect();
        let transfer_conj = transfer
            .iter()
            .map(|t| t.iter().map(|z| z.conj()).collect())
            .collect();
        Ok(Self {
            dims,
            fft,
            origin_kernels,
            transfer,
            transfer_conj,
            identity,
        })
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    /// Content hash of the image shape and the origin-centered kernels.
    pub fn fingerprint(&self) -> String {
        let mut bytes = Vec::new();
        for v in [self.dims.height, self.dims.width, self.dims.channels] {
            bytes.extend_from_slice(&(v as u64).to_le_bytes());
        }
        for p in &self.origin_kernels {
            bytes.extend(p.iter().flat_map(|v| v.to_le_bytes()));
        }
        crate::diffusion::sha2_hex(bytes)
    }

    pub fn fft(&self) -> &Fft2 {
        &self.fft
    }

    /// DFT of the origin-positioned kernel for channel `c`.
    pub fn transfer(&self, c: usize) -> &[Complex64] {
        &self.transfer[c]
    }

    pub fn origin_kernel(&self, c: usize) -> &[f64] {
        &self.origin_kernels[c]
    }

    pub fn max_transfer_magnitude(&self) -> f64 {
        self.transfer
            .iter()
            .flatten()
            .fold(0.0, |m, z| m.max(z.norm()))
    }

    pub(crate) fn check(&self, x: &ImageTensor, what: &str) -> Result<()> {
        if x.dims() != self.dims {
            return Err(Error::Dimension(format!(
                "{what}: operator is {}, tensor is {}",
                self.dims,
                x.dims()
            )));
        }
        Ok(())
    }

    /// Applies per-channel spectral gains to `x`.
    pub(crate) fn filter(&self, x: &ImageTensor, gains: &[Vec<Complex64>]) -> ImageTensor {
        let planes: Vec<Vec<f64>> = (0..self.dims.channels)
            .map(|c| self.fft.filter_real(&x.channel_plane(c), &gains[c]))
            .collect();
        ImageTensor::from_planes(self.dims.height, self.dims.width, &planes)
            .expect("filter preserves dims")
    }

    /// `A x`: circular convolution of every channel with the PSF.
    pub fn apply(&self, x: &ImageTensor) -> Result<ImageTensor> {
        self.check(x, "apply")?;
        if self.identity {
            return Ok(x.clone());
        }
        Ok(self.filter(x, &self.transfer))
    }

    /// `Aᵀ y`: circular correlation with the PSF.
    pub fn adjoint(&self, y: &ImageTensor) -> Result<ImageTensor> {
        self.check(y, "adjoint")?;
        if self.identity {
            return Ok(y.clone());
        }
        Ok(self.filter(y, &self.transfer_conj))
    }

    /// Applies `A` to a batch of images.
    pub fn apply_batch(&self, exec: Exec, xs: &[ImageTensor]) -> Result<Vec<ImageTensor>> {
        parallel::map_slice(exec, xs, |x| self.apply(x))
            .into_iter()
            .collect()
    }
}

/// How `A†` is formed from the transfer function.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum PinvMode {
    /// `conj(H)/|H|²` where `|H| > eps` (absolute threshold), else 0.
    Spectral { eps: f64 },
    /// `conj(H)/(|H|² + lambda_w)`.
    Wiener { lambda_w: f64 },
}

/// Pseudo-inverse of a [`ConvolutionOperator`], stored as spectral gains.
#[derive(Debug, Clone)]
pub struct PseudoInverse {
    mode: PinvMode,
    dims: Dims,
    gains: Vec<Vec<Complex64>>,
    /// Spectral gains of `A†A` (real, in `[0, 1]`).
    range_gains: Vec<Vec<Complex64>>,
}

impl PseudoInverse {
    pub fn new(op: &ConvolutionOperator, mode: PinvMode) -> Result<Self> {
        let (gains, range_gains): (Vec<_>, Vec<_>) = match mode {
            PinvMode::Spectral { eps } => {
                if !(eps > 0.0) || !eps.is_finite() {
                    return Err(Error::Parameter(format!(
                        "spectral threshold must be positive, got {eps}"
                    )));
                }
                op.transfer
                    .iter()
                    .map(|t| {
                        t.iter()
                            .map(|&h| {
                                if h.norm() > eps {
                                    (h.conj() / h.norm_sqr(), Complex64::new(1.0, 0.0))
                                } else {
                                    (Complex64::default(), Complex64::default())
                                }
                            })
                            .unzip()
                    })
                    .unzip()
            }
            PinvMode::Wiener { lambda_w } => {
                if !(lambda_w > 0.0) || !lambda_w.is_finite() {
                    return Err(Error::Parameter(format!(
                        "Wiener regularization must be positive, got {lambda_w}"
                    )));
                }
                op.transfer
                    .iter()
                    .map(|t| {
                        t.iter()
                            .map(|&h| {
                                let d = h.norm_sqr() + lambda_w;
                                (h.conj() / d, Complex64::new(h.norm_sqr() / d, 0.0))
                            })
                            .unzip()
                    })
                    .unzip()
            }
        };
        Ok(Self {
            mode,
            dims: op.dims(),
            gains,
            range_gains,
        })
    }

    /// Spectral pseudo-inverse with threshold `1e-6 · max|H|`.
    pub fn spectral_default(op: &ConvolutionOperator) -> Result<Self> {
        let eps = DEFAULT_SPECTRAL_REL_EPS * op.max_transfer_magnitude();
        Self::new(op, PinvMode::Spectral { eps })
    }

    pub fn wiener(op: &ConvolutionOperator, lambda_w: f64) -> Result<Self> {
        Self::new(op, PinvMode::Wiener { lambda_w })
    }

    pub fn mode(&self) -> PinvMode {
        self.mode
    }

    pub fn is_spectral(&self) -> bool {
        matches!(self.mode, PinvMode::Spectral { .. })
    }

    pub fn gains(&self, c: usize) -> &[Complex64] {
        &self.gains[c]
    }

    /// Root-mean-square magnitude of the gains, the noise amplification of `A†`.
    pub fn gain_rms(&self) -> f64 {
        let n: usize = self.gains.iter().map(Vec::len).sum();
        (self.gains.iter().flatten().map(|g| g.norm_sqr()).sum::<f64>() / n as f64).sqrt()
    }

    /// Number of transfer bins treated as null space, per channel.
    pub fn null_bins(&self) -> Vec<usize> {
        self.range_gains
            .iter()
            .map(|r| r.iter().filter(|g| g.re == 0.0).count())
            .collect()
    }

    fn check(&self, op: &ConvolutionOperator) -> Result<()> {
        if op.dims() != self.dims {
            return Err(Error::Dimension(format!(
                "pseudo-inverse built for {}, operator is {}",
                self.dims,
                op.dims()
            )));
        }
        Ok(())
    }

    /// `A† y`.
    pub fn apply(&self, op: &ConvolutionOperator, y: &ImageTensor) -> Result<ImageTensor> {
        self.check(op)?;
        op.check(y, "pinv_apply")?;
        Ok(op.filter(y, &self.gains))
    }

    /// `x − λ A†(A x − y)`, evaluated in one spectral pass per channel.
    /// With `λ = 1` this is the range–null composition `A†y + (I − A†A)x`.
    pub(crate) fn relaxed_correction(
        &self,
        op: &ConvolutionOperator,
        x: &ImageTensor,
        y: &ImageTensor,
        lambda: f64,
    ) -> Result<ImageTensor> {
        self.check(op)?;
        op.check(x, "range correction")?;
        op.check(y, "range correction")?;
        let fft = op.fft();
        let planes: Vec<Vec<f64>> = (0..op.dims().channels)
            .map(|c| {
                let xp = x.channel_plane(c);
                let xf = fft.forward_real(&xp);
                let yf = fft.forward_real(&y.channel_plane(c));
                let corr: Vec<Complex64> = xf
                    .iter()
                    .zip(&yf)
                    .zip(op.transfer(c).iter().zip(&self.gains[c]))
                    .map(|((&xv, &yv), (&h, &g))| g * (h * xv - yv))
                    .collect();
                let corr = fft.inverse_real(corr);
                xp.iter()
                    .zip(&corr)
                    .map(|(a, b)| a - lambda * b)
                    .collect()
            })
            .collect();
        ImageTensor::from_planes(op.dims().height, op.dims().width, &planes)
    }

    fn require_projector(&self, allow_approximate: bool) -> Result<()> {
        if !self.is_spectral() && !allow_approximate {
            return Err(Error::Config(
                "range/null projectors are exact only for the spectral pseudo-inverse; \
                 pass the approximate-projector flag to use a Wiener pseudo-inverse"
                    .into(),
            ));
        }
        Ok(())
    }

    /// `A†A x`.
    pub fn range_project(
        &self,
        op: &ConvolutionOperator,
        x: &ImageTensor,
        allow_approximate: bool,
    ) -> Result<ImageTensor> {
        self.require_projector(allow_approximate)?;
        self.check(op)?;
        op.check(x, "range_project")?;
        Ok(op.filter(x, &self.range_gains))
    }

    /// `(I − A†A) x`.
    pub fn null_project(
        &self,
        op: &ConvolutionOperator,
        x: &ImageTensor,
        allow_approximate: bool,
    ) -> Result<ImageTensor> {
        let r = self.range_project(op, x, allow_approximate)?;
        x.sub(&r)
    }
}
