use crate::error::{Error, Result};

/// Index mapping from a full output shape onto an operand of equal rank whose
/// extents are either equal to the output's or 1 (a broadcast singleton axis).
#[derive(Clone, Debug)]
pub struct BroadcastPlan {
    shape: Vec<usize>,
    strides: Vec<usize>,
}

impl BroadcastPlan {
    pub fn new(out: &[usize], operand: &[usize]) -> Option<Self> {
        if out.len() != operand.len() {
            return None;
        }
        let mut strides = vec![0; out.len()];
        let mut acc = 1;
        for axis in (0..out.len()).rev() {
            if operand[axis] == out[axis] {
                strides[axis] = if out[axis] == 1 { 0 } else { acc };
            } else if operand[axis] == 1 {
                strides[axis] = 0;
            } else {
                return None;
            }
            acc *= operand[axis];
        }
        Some(Self {
            shape: out.to_vec(),
            strides,
        })
    }

    /// Calls `f(out_index, operand_index)` for every element of the output
    /// in row-major order.
    #[inline]
    pub fn for_each(&self, mut f: impl FnMut(usize, usize)) {
        let rank = self.shape.len();
        if rank == 0 {
            f(0, 0);
            return;
        }
        let inner = self.shape[rank - 1];
        let inner_stride = self.strides[rank - 1];
        let outer: usize = self.shape[..rank - 1].iter().product();
        let mut counter = vec![0usize; rank - 1];
        let mut base = 0usize;
        for o in 0..outer {
            let out_base = o * inner;
            if inner_stride == 1 {
                for j in 0..inner {
                    f(out_base + j, base + j);
                }
            } else if inner_stride == 0 {
                for j in 0..inner {
                    f(out_base + j, base);
                }
            } else {
                for j in 0..inner {
                    f(out_base + j, base + j * inner_stride);
                }
            }
            // advance the odometer over the leading axes
            for axis in (0..rank - 1).rev() {
                counter[axis] += 1;
                base += self.strides[axis];
                if counter[axis] < self.shape[axis] {
                    break;
                }
                base -= self.strides[axis] * counter[axis];
                counter[axis] = 0;
            }
        }
    }
}

/// `out[o] = f(a[ia], b[ib])` over the broadcast `shape`, walking rows of
/// the last axis with per-operand strides.
pub(crate) fn zip_broadcast<T: Copy>(
    shape: &[usize],
    a: &[T],
    a_shape: &[usize],
    b: &[T],
    b_shape: &[usize],
    f: impl Fn(T, T) -> T,
) -> Vec<T> {
    let numel: usize = shape.iter().product();
    let pa = BroadcastPlan::new(shape, a_shape).expect("lhs broadcast");
    let pb = BroadcastPlan::new(shape, b_shape).expect("rhs broadcast");
    let rank = shape.len();
    if rank == 0 {
        return vec![f(a[0], b[0])];
    }
    let inner = shape[rank - 1];
    let (sa, sb) = (pa.strides[rank - 1], pb.strides[rank - 1]);
    let mut out = Vec::with_capacity(numel);
    let mut counter = vec![0usize; rank - 1];
    let (mut base_a, mut base_b) = (0usize, 0usize);
    for _ in 0..numel / inner {
        match (sa, sb) {
            (1, 1) => out.extend(
                a[base_a..base_a + inner]
                    .iter()
                    .zip(&b[base_b..base_b + inner])
                    .map(|(&x, &y)| f(x, y)),
            ),
            (1, 0) => {
                let y = b[base_b];
                out.extend(a[base_a..base_a + inner].iter().map(|&x| f(x, y)));
            }
            (0, 1) => {
                let x = a[base_a];
                out.extend(b[base_b..base_b + inner].iter().map(|&y| f(x, y)));
            }
            _ => out.extend((0..inner).map(|j| f(a[base_a + j * sa], b[base_b + j * sb]))),
        }
        for axis in (0..rank - 1).rev() {
            counter[axis] += 1;
            base_a += pa.strides[axis];
            base_b += pb.strides[axis];
            if counter[axis] < shape[axis] {
                break;
            }
            base_a -= pa.strides[axis] * counter[axis];
            base_b -= pb.strides[axis] * counter[axis];
            counter[axis] = 0;
        }
    }
    out
}

/// Output shape of a broadcasting binary op.
pub(crate) fn broadcast_shape(op: &'static str, a: &[usize], b: &[usize]) -> Result<Vec<usize>> {
    let mismatch = || Error::Dimension {
        op,
        lhs: a.to_vec(),
        rhs: b.to_vec(),
    };
    if a.len() != b.len() {
        return Err(mismatch());
    }
    a.iter()
        .zip(b)
        .map(|(&x, &y)| match (x, y) {
            (x, y) if x == y => Ok(x),
            (1, y) => Ok(y),
            (x, 1) => Ok(x),
            _ => Err(mismatch()),
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn collect(plan: &BroadcastPlan) -> Vec<(usize, usize)> {
        let mut v = Vec::new();
        plan.for_each(|o, i| v.push((o, i)));
        v
    }

    #[test]
    fn identity_plan() {
        let plan = BroadcastPlan::new(&[2, 3], &[2, 3]).unwrap();
        let pairs = collect(&plan);
        assert!(pairs.iter().all(|(o, i)| o == i));
        assert_eq!(pairs.len(), 6);
    }

    #[test]
    fn broadcasts_middle_axis() {
        // [2,1,2] onto [2,3,2]
        let plan = BroadcastPlan::new(&[2, 3, 2], &[2, 1, 2]).unwrap();
        let idx: Vec<usize> = collect(&plan).into_iter().map(|(_, i)| i).collect();
        assert_eq!(idx, vec![0, 1, 0, 1, 0, 1, 2, 3, 2, 3, 2, 3]);
    }

    #[test]
    fn broadcasts_last_axis_and_scalar_like() {
        let plan = BroadcastPlan::new(&[2, 3], &[2, 1]).unwrap();
        let idx: Vec<usize> = collect(&plan).into_iter().map(|(_, i)| i).collect();
        assert_eq!(idx, vec![0, 0, 0, 1, 1, 1]);
        let plan = BroadcastPlan::new(&[2, 3], &[1, 1]).unwrap();
        assert!(collect(&plan).iter().all(|&(_, i)| i == 0));
    }

    #[test]
    fn rejects_incompatible() {
        assert!(BroadcastPlan::new(&[2, 3], &[2, 2]).is_none());
        assert!(broadcast_shape("t", &[2, 3], &[3]).is_err());
        assert_eq!(broadcast_shape("t", &[2, 1], &[1, 4]).unwrap(), vec![2, 4]);
    }
}
