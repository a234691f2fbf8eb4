//! Mip pyramids for the three feature planes, stored in one flat buffer.

use crate::Scalar;

/// Offsets of every (plane, level) block inside a flat pyramid buffer.
/// Each level is row-major `res × res × feature_dim`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PyramidLayout {
    pub feature_dim: usize,
    pub res: Vec<usize>,
    offsets: Vec<[usize; 3]>,
    total: usize,
}

impl PyramidLayout {
    pub fn new(base_res: usize, levels: usize, feature_dim: usize) -> Self {
        let res: Vec<usize> = (0..levels).map(|k| base_res.div_ceil(1 << k).max(1)).collect();
        let mut offsets = vec![[0; 3]; levels];
        let mut total = 0;
        for plane in 0..3 {
            for (k, &r) in res.iter().enumerate() {
                offsets[k][plane] = total;
                total += r * r * feature_dim;
            }
        }
        Self {
            feature_dim,
            res,
            offsets,
            total,
        }
    }

    pub fn levels(&self) -> usize {
        self.res.len()
    }

    pub fn len(&self) -> usize {
        self.total
    }

    pub fn is_empty(&self) -> bool {
        self.total == 0
    }

    pub fn offset(&self, plane: usize, level: usize) -> usize {
        self.offsets[level][plane]
    }

    pub fn level_len(&self, level: usize) -> usize {
        self.res[level] * self.res[level] * self.feature_dim
    }

    /// Range of one plane's level inside the flat buffer.
    pub fn block(&self, plane: usize, level: usize) -> std::ops::Range<usize> {
        let start = self.offset(plane, level);
        start..start + self.level_len(level)
    }
}

/// 2×2 average pool. Output texel `(i, j)` averages the input texels
/// `{2i, 2i+1} × {2j, 2j+1}` that exist, so odd edges average fewer.
pub fn downsample_level<T: Scalar>(src: &[T], src_res: usize, dst: &mut [T], dst_res: usize, c: usize) {
    for y in 0..dst_res {
        let ys = (2 * y)..(2 * y + 2).min(src_res);
        for x in 0..dst_res {
            let xs = (2 * x)..(2 * x + 2).min(src_res);
            let count = T::from_usize_lossy(ys.len() * xs.len());
            let out = &mut dst[(y * dst_res + x) * c..][..c];
            out.iter_mut().for_each(|v| *v = T::zero());
            for sy in ys.clone() {
                for sx in xs.clone() {
                    let inp = &src[(sy * src_res + sx) * c..][..c];
                    for (o, i) in out.iter_mut().zip(inp) {
                        *o += *i;
                    }
                }
            }
            out.iter_mut().for_each(|v| *v /= count);
        }
    }
}

/// Adjoint of [`downsample_level`]: accumulates `dst_grad` into `src_grad`.
pub fn downsample_level_backward<T: Scalar>(
    dst_grad: &[T],
    dst_res: usize,
    src_grad: &mut [T],
    src_res: usize,
    c: usize,
) {
    for y in 0..dst_res {
        let ys = (2 * y)..(2 * y + 2).min(src_res);
        for x in 0..dst_res {
            let xs = (2 * x)..(2 * x + 2).min(src_res);
            let inv = T::one() / T::from_usize_lossy(ys.len() * xs.len());
            let g = &dst_grad[(y * dst_res + x) * c..][..c];
            for sy in ys.clone() {
                for sx in xs.clone() {
                    let out = &mut src_grad[(sy * src_res + sx) * c..][..c];
                    for (o, gi) in out.iter_mut().zip(g) {
                        *o += *gi * inv;
                    }
                }
            }
        }
    }
}

/// All three plane pyramids rebuilt from level-0 parameters.
#[derive(Clone, Debug)]
pub struct TriPyramid<T> {
    pub layout: PyramidLayout,
    pub data: Vec<T>,
}

impl<T: Scalar> TriPyramid<T> {
    pub fn build(layout: &PyramidLayout, planes: &[Vec<T>; 3]) -> Self {
        let mut data = vec![T::zero(); layout.len()];
        for (p, plane) in planes.iter().enumerate() {
            data[layout.block(p, 0)].copy_from_slice(plane);
            for k in 1..layout.levels() {
                let (lo, hi) = data.split_at_mut(layout.offset(p, k));
                let src = &lo[layout.block(p, k - 1)];
                let dst = &mut hi[..layout.level_len(k)];
                downsample_level(src, layout.res[k - 1], dst, layout.res[k], layout.feature_dim);
            }
        }
        Self {
            layout: layout.clone(),
            data,
        }
    }

    pub fn level(&self, plane: usize, level: usize) -> &[T] {
        &self.data[self.layout.block(plane, level)]
    }
}

/// Folds a gradient over the whole pyramid down to level-0 plane gradients.
/// Consumes the upper levels of `grad` in place.
pub fn pyramid_backward<T: Scalar>(layout: &PyramidLayout, grad: &mut [T], out: &mut [Vec<T>; 3]) {
    for (p, plane_grad) in out.iter_mut().enumerate() {
        for k in (1..layout.levels()).rev() {
            let (lo, hi) = grad.split_at_mut(layout.offset(p, k));
            let dst = &hi[..layout.level_len(k)];
            let src = &mut lo[layout.block(p, k - 1)];
            downsample_level_backward(dst, layout.res[k], src, layout.res[k - 1], layout.feature_dim);
        }
        plane_grad.copy_from_slice(&grad[layout.block(p, 0)]);
    }
}

/// Stand-alone pyramid for one plane: level 0 plus successive 2×2 means.
pub fn build_mip_pyramid<T: Scalar>(level0: &[T], res: usize, feature_dim: usize, levels: usize) -> Vec<Vec<T>> {
    assert_eq!(level0.len(), res * res * feature_dim);
    let mut out = vec![level0.to_vec()];
    let mut cur_res = res;
    for _ in 1..levels {
        let next_res = cur_res.div_ceil(2).max(1);
        let mut next = vec![T::zero(); next_res * next_res * feature_dim];
        downsample_level(out.last().unwrap(), cur_res, &mut next, next_res, feature_dim);
        out.push(next);
        cur_res = next_res;
    }
    out
}
