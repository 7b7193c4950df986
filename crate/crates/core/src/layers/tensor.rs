use crate::bitcore::BitTensor;
use crate::error::{Error, Result};

/// NHWC tensor of pre-threshold integer accumulators.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct IntTensor {
    pub n: usize,
    pub h: usize,
    pub w: usize,
    pub c: usize,
    pub data: Vec<i32>,
}

impl IntTensor {
    pub fn zeros(n: usize, h: usize, w: usize, c: usize) -> Self {
        IntTensor {
            n,
            h,
            w,
            c,
            data: vec![0; n * h * w * c],
        }
    }

    pub fn get(&self, n: usize, y: usize, x: usize, ch: usize) -> i32 {
        self.data[((n * self.h + y) * self.w + x) * self.c + ch]
    }

    pub fn max_abs(&self) -> i32 {
        self.data.iter().map(|v| v.abs()).max().unwrap_or(0)
    }
}

/// NHWC tensor of reals, used by the full-precision endpoints.
#[derive(Clone, Debug, PartialEq)]
pub struct FloatTensor {
    pub n: usize,
    pub h: usize,
    pub w: usize,
    pub c: usize,
    pub data: Vec<f64>,
}

impl FloatTensor {
    pub fn new(n: usize, h: usize, w: usize, c: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != n * h * w * c {
            return Err(Error::Layout(format!(
                "{} values for a {n}x{h}x{w}x{c} tensor",
                data.len()
            )));
        }
        Ok(FloatTensor { n, h, w, c, data })
    }

    pub fn zeros(n: usize, h: usize, w: usize, c: usize) -> Self {
        FloatTensor {
            n,
            h,
            w,
            c,
            data: vec![0.0; n * h * w * c],
        }
    }

    pub fn get(&self, n: usize, y: usize, x: usize, ch: usize) -> f64 {
        self.data[((n * self.h + y) * self.w + x) * self.c + ch]
    }

    /// `±1.0` view of a bit tensor over its logical channels.
    pub fn from_bits(bits: &BitTensor) -> Self {
        FloatTensor {
            n: bits.n(),
            h: bits.h(),
            w: bits.w(),
            c: bits.c(),
            data: bits.to_bipolar().into_iter().map(f64::from).collect(),
        }
    }
}
