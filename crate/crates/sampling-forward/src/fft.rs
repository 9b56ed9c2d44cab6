use std::sync::Arc;

use ndarray::{Array3, Axis};
use rustfft::{Fft, FftPlanner};
use volume_core::C32;

fn apply_axis(data: &mut Array3<C32>, axis: usize, fft: &Arc<dyn Fft<f32>>) {
    let n = data.shape()[axis];
    let mut scratch = vec![C32::new(0.0, 0.0); fft.get_inplace_scratch_len()];
    let mut lane_buf = vec![C32::new(0.0, 0.0); n];
    for mut lane in data.lanes_mut(Axis(axis)) {
        if let Some(slice) = lane.as_slice_mut() {
            fft.process_with_scratch(slice, &mut scratch);
        } else {
            for (b, v) in lane_buf.iter_mut().zip(lane.iter()) {
                *b = *v;
            }
            fft.process_with_scratch(&mut lane_buf, &mut scratch);
            for (v, b) in lane.iter_mut().zip(lane_buf.iter()) {
                *v = *b;
            }
        }
    }
}

fn fft3(data: &mut Array3<C32>, inverse: bool) {
    let mut planner = FftPlanner::<f32>::new();
    let dims = data.dim();
    let n_total = (dims.0 * dims.1 * dims.2) as f32;
    for (axis, n) in [(2, dims.2), (1, dims.1), (0, dims.0)] {
        let fft = if inverse {
            planner.plan_fft_inverse(n)
        } else {
            planner.plan_fft_forward(n)
        };
        apply_axis(data, axis, &fft);
    }
    let norm = 1.0 / n_total.sqrt();
    data.mapv_inplace(|z| z * norm);
}

/// In-place unitary 3D DFT (1/sqrt(N) normalization).
pub fn fft3_unitary(data: &mut Array3<C32>) {
    fft3(data, false);
}

/// In-place unitary inverse 3D DFT.
pub fn ifft3_unitary(data: &mut Array3<C32>) {
    fft3(data, true);
}
