//! Direct reference implementations used only by unit tests.

use super::Conv2dParams;
use crate::tensor::Tensor;

pub fn naive_conv2d(x: &Tensor<f64>, w: &Tensor<f64>, b: Option<&Tensor<f64>>, p: Conv2dParams) -> Tensor<f64> {
    let (n, c, h, wd) = x.dims4().unwrap();
    let (f, _, kh, kw) = w.dims4().unwrap();
    let oh = (h + 2 * p.padding - p.dilation * (kh - 1) - 1) / p.stride + 1;
    let ow = (wd + 2 * p.padding - p.dilation * (kw - 1) - 1) / p.stride + 1;
    let mut out = Tensor::zeros([n, f, oh, ow]);
    for ni in 0..n {
        for fi in 0..f {
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut acc = b.map_or(0.0, |b| b.data()[fi]);
                    for ci in 0..c {
                        for ki in 0..kh {
                            for kj in 0..kw {
                                let iy = (oy * p.stride + ki * p.dilation) as isize - p.padding as isize;
                                let ix = (ox * p.stride + kj * p.dilation) as isize - p.padding as isize;
                                if iy < 0 || ix < 0 || iy >= h as isize || ix >= wd as isize {
                                    continue;
                                }
                                acc += x.data()[((ni * c + ci) * h + iy as usize) * wd + ix as usize]
                                    * w.data()[((fi * c + ci) * kh + ki) * kw + kj];
                            }
                        }
                    }
                    out.data_mut()[((ni * f + fi) * oh + oy) * ow + ox] = acc;
                }
            }
        }
    }
    out
}
