//! Scalar math shims. With `std` these call the intrinsics; without it they
//! route through `libm` so the crate stays `no_std`-buildable.

#[cfg(feature = "std")]
mod imp {
    pub fn sqrtf(x: f32) -> f32 {
        x.sqrt()
    }
    pub fn expf(x: f32) -> f32 {
        x.exp()
    }
    pub fn sinf(x: f32) -> f32 {
        x.sin()
    }
    pub fn cosf(x: f32) -> f32 {
        x.cos()
    }
    pub fn powf(x: f32, y: f32) -> f32 {
        x.powf(y)
    }
    pub fn sqrt(x: f64) -> f64 {
        x.sqrt()
    }
    pub fn exp(x: f64) -> f64 {
        x.exp()
    }
    pub fn ln(x: f64) -> f64 {
        x.ln()
    }
    pub fn log10(x: f64) -> f64 {
        x.log10()
    }
}

#[cfg(not(feature = "std"))]
mod imp {
    pub fn sqrtf(x: f32) -> f32 {
        libm::sqrtf(x)
    }
    pub fn expf(x: f32) -> f32 {
        libm::expf(x)
    }
    pub fn sinf(x: f32) -> f32 {
        libm::sinf(x)
    }
    pub fn cosf(x: f32) -> f32 {
        libm::cosf(x)
    }
    pub fn powf(x: f32, y: f32) -> f32 {
        libm::powf(x, y)
    }
    pub fn sqrt(x: f64) -> f64 {
        libm::sqrt(x)
    }
    pub fn exp(x: f64) -> f64 {
        libm::exp(x)
    }
    pub fn ln(x: f64) -> f64 {
        libm::log(x)
    }
    pub fn log10(x: f64) -> f64 {
        libm::log10(x)
    }
}

pub(crate) use imp::*;
