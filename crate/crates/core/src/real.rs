use ndarray::NdFloat;
use num_traits::FromPrimitive;

/// Floating-point element type usable by the numeric kernels (`f32` or `f64`).
pub trait Real: NdFloat + FromPrimitive + Default {
    fn from_f64_lossy(v: f64) -> Self;
    fn as_f64(self) -> f64;
}

impl Real for f32 {
    #[inline]
    fn from_f64_lossy(v: f64) -> Self {
        v as f32
    }
    #[inline]
    fn as_f64(self) -> f64 {
        self as f64
    }
}

impl Real for f64 {
    #[inline]
    fn from_f64_lossy(v: f64) -> Self {
        v
    }
    #[inline]
    fn as_f64(self) -> f64 {
        self
    }
}
