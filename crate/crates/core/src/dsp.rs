//! Amplitude preprocessing: Hampel outlier filtering, segmentation into
//! fixed-length spectrogram windows, normalization and circular time shifts.

use ndarray::{Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::csi::{amplitude_vector, validate_frame, ActivityLabel, CsiFrame, FrameError, SessionMeta, SUBCARRIERS};

/// Frames per spectrogram window (4 s at 100 Hz).
pub const WINDOW_LEN: usize = 400;

/// Scale turning a median absolute deviation into a Gaussian sigma estimate.
pub const MAD_SCALE: f64 = 1.4826;

const ZSCORE_MIN_STD: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum MatrixError {
    #[error("amplitude matrix needs {SUBCARRIERS} columns, got {0}")]
    ColumnCount(usize),
    #[error("amplitude at row {row}, column {col} is {value}, expected a finite non-negative value")]
    InvalidEntry { row: usize, col: usize, value: f64 },
    #[error(transparent)]
    Frame(#[from] FrameError),
}

/// T×52 matrix whose row t holds the subcarrier amplitudes of frame t.
#[derive(Debug, Clone, PartialEq)]
pub struct AmplitudeMatrix {
    data: Array2<f64>,
}

impl AmplitudeMatrix {
    pub fn new(data: Array2<f64>) -> Result<Self, MatrixError> {
        if data.ncols() != SUBCARRIERS {
            return Err(MatrixError::ColumnCount(data.ncols()));
        }
        if let Some(((row, col), &value)) = data.indexed_iter().find(|(_, v)| !(v.is_finite() && **v >= 0.0)) {
            return Err(MatrixError::InvalidEntry { row, col, value });
        }
        Ok(Self { data })
    }

    pub fn from_frames<'a, I>(frames: I) -> Result<Self, MatrixError>
    where
        I: IntoIterator<Item = &'a CsiFrame>,
    {
        let mut flat = Vec::new();
        let mut rows = 0;
        for frame in frames {
            validate_frame(frame)?;
            flat.extend(amplitude_vector(frame));
            rows += 1;
        }
        let data = Array2::from_shape_vec((rows, SUBCARRIERS), flat).expect("rows x 52 entries");
        Ok(Self { data })
    }

    pub fn rows(&self) -> usize {
        self.data.nrows()
    }

    pub fn view(&self) -> ArrayView2<'_, f64> {
        self.data.view()
    }

    pub fn into_inner(self) -> Array2<f64> {
        self.data
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HampelParams {
    /// Samples on each side of the center; the window spans `2·half_window + 1`.
    pub half_window: usize,
    pub n_sigma: f64,
}

impl Default for HampelParams {
    fn default() -> Self {
        Self {
            half_window: 5,
            n_sigma: 3.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HampelOutput {
    pub filtered: Vec<f64>,
    /// `true` where the sample was replaced by its window median.
    pub outliers: Vec<bool>,
}

impl HampelOutput {
    pub fn replaced(&self) -> usize {
        self.outliers.iter().filter(|&&o| o).count()
    }
}

fn median_of_sorted(sorted: &[f64]) -> f64 {
    let n = sorted.len();
    if n % 2 == 1 {
        sorted[n / 2]
    } else {
        (sorted[n / 2 - 1] + sorted[n / 2]) / 2.0
    }
}

/// Median absolute deviation from `median` of an ascending slice.
///
/// Deviations fall monotonically to the left of the median and rise to its
/// right, so the two runs are merged outward instead of re-sorted.
fn mad_of_sorted(sorted: &[f64], median: f64) -> f64 {
    let n = sorted.len();
    let split = sorted.partition_point(|&v| v < median);
    let (mut left, mut right) = (split, split);
    let upper_rank = n / 2;
    let lower_rank = (n - 1) / 2;
    let mut lower = 0.0;
    for rank in 0..=upper_rank {
        let take_left = match (left > 0, right < n) {
            (true, true) => (sorted[left - 1] - median).abs() <= (sorted[right] - median).abs(),
            (true, false) => true,
            (false, _) => false,
        };
        let dev = if take_left {
            left -= 1;
            (sorted[left] - median).abs()
        } else {
            right += 1;
            (sorted[right - 1] - median).abs()
        };
        if rank == lower_rank {
            lower = dev;
        }
        if rank == upper_rank {
            return if n % 2 == 1 { dev } else { (lower + dev) / 2.0 };
        }
    }
    unreachable!("loop returns at upper_rank")
}

/// Sliding-window Hampel filter.
///
/// The window around t is `[t - half_window, t + half_window]` clipped to the
/// series. A sample is replaced by the window median when it deviates from it
/// by strictly more than `n_sigma · 1.4826 · MAD`; with a zero MAD any
/// deviation at all is replaced. Windows are always taken over the input
/// series, never over already-filtered values.
pub fn hampel(series: &[f64], params: HampelParams) -> HampelOutput {
    let n = series.len();
    let h = params.half_window;
    let mut filtered = Vec::with_capacity(n);
    let mut outliers = Vec::with_capacity(n);
    let mut window: Vec<f64> = Vec::with_capacity(2 * h + 1);

    for &v in series.iter().take(h.min(n)) {
        insert_sorted(&mut window, v);
    }
    for t in 0..n {
        if t + h < n {
            insert_sorted(&mut window, series[t + h]);
        }
        if t > h {
            remove_sorted(&mut window, series[t - h - 1]);
        }
        let median = median_of_sorted(&window);
        let scale = MAD_SCALE * mad_of_sorted(&window, median);
        let x = series[t];
        if (x - median).abs() > params.n_sigma * scale {
            filtered.push(median);
            outliers.push(true);
        } else {
            filtered.push(x);
            outliers.push(false);
        }
    }
    HampelOutput { filtered, outliers }
}

fn insert_sorted(window: &mut Vec<f64>, v: f64) {
    let at = window.partition_point(|x| x.total_cmp(&v).is_lt());
    window.insert(at, v);
}

fn remove_sorted(window: &mut Vec<f64>, v: f64) {
    let at = window.partition_point(|x| x.total_cmp(&v).is_lt());
    debug_assert!(at < window.len() && window[at].total_cmp(&v).is_eq());
    window.remove(at);
}

/// Applies [`hampel`] to every subcarrier column independently.
pub fn hampel_matrix(m: &AmplitudeMatrix, params: HampelParams) -> AmplitudeMatrix {
    let mut out = m.data.clone();
    for (mut dst, src) in out.axis_iter_mut(Axis(1)).zip(m.data.axis_iter(Axis(1))) {
        let column: Vec<f64> = src.to_vec();
        for (d, v) in dst.iter_mut().zip(hampel(&column, params).filtered) {
            *d = v;
        }
    }
    AmplitudeMatrix { data: out }
}

/// A window borrowed from an [`AmplitudeMatrix`].
#[derive(Debug, Clone)]
pub struct WindowSlice<'a> {
    pub source_offset: usize,
    pub data: ArrayView2<'a, f64>,
}

/// Cuts windows of `window_len` rows starting every `stride` rows; a trailing
/// remainder shorter than `window_len` is dropped.
///
/// # Panics
///
/// If `window_len` or `stride` is zero.
pub fn segment_windows(m: &AmplitudeMatrix, window_len: usize, stride: usize) -> Vec<WindowSlice<'_>> {
    assert!(window_len >= 1 && stride >= 1, "window_len and stride must be positive");
    let rows = m.rows();
    if rows < window_len {
        return Vec::new();
    }
    (0..=(rows - window_len) / stride)
        .map(|k| {
            let start = k * stride;
            WindowSlice {
                source_offset: start,
                data: m.data.slice(ndarray::s![start..start + window_len, ..]),
            }
        })
        .collect()
}

/// Standardizes all entries jointly to zero mean and unit (population)
/// deviation. Sums run in row-major order so results are reproducible.
pub fn zscore(window: ArrayView2<'_, f64>) -> Array2<f64> {
    let n = window.len() as f64;
    let mean = window.iter().sum::<f64>() / n;
    let var = window.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    let std = var.sqrt().max(ZSCORE_MIN_STD);
    window.mapv(|v| (v - mean) / std)
}

/// Rotates rows along time: output row t is input row `(t - k) mod rows`.
pub fn circular_shift<A: Clone>(window: ArrayView2<'_, A>, k: i64) -> Array2<A> {
    let rows = window.nrows();
    if rows == 0 {
        return window.to_owned();
    }
    let shift = k.rem_euclid(rows as i64) as usize;
    let order: Vec<usize> = (0..rows).map(|t| (t + rows - shift) % rows).collect();
    window.select(Axis(0), &order)
}

/// A labeled spectrogram window as persisted in a dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectrogramWindow {
    pub data: Array2<f32>,
    pub label: ActivityLabel,
    pub meta: SessionMeta,
    /// Index of the window's first frame within its labeled segment.
    pub source_offset: usize,
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::time::Instant;

    /// Re-sorts every window from scratch.
    fn naive_hampel(series: &[f64], h: usize, n_sigma: f64) -> (Vec<f64>, Vec<bool>) {
        let median = |v: &mut Vec<f64>| {
            v.sort_by(f64::total_cmp);
            let n = v.len();
            if n % 2 == 1 {
                v[n / 2]
            } else {
                (v[n / 2 - 1] + v[n / 2]) / 2.0
            }
        };
        let mut out = Vec::new();
        let mut mask = Vec::new();
        for t in 0..series.len() {
            let lo = t.saturating_sub(h);
            let hi = (t + h).min(series.len() - 1);
            let mut w = series[lo..=hi].to_vec();
            let m = median(&mut w);
            let mut dev: Vec<f64> = w.iter().map(|x| (x - m).abs()).collect();
            let s = 1.4826 * median(&mut dev);
            if (series[t] - m).abs() > n_sigma * s {
                out.push(m);
                mask.push(true);
            } else {
                out.push(series[t]);
                mask.push(false);
            }
        }
        (out, mask)
    }

    fn bits(v: &[f64]) -> Vec<u64> {
        v.iter().map(|x| x.to_bits()).collect()
    }

    #[test]
    fn constant_series_is_untouched() {
        let out = hampel(&[5.0; 5], HampelParams::default());
        assert_eq!(out.filtered, vec![5.0; 5]);
        assert_eq!(out.outliers, vec![false; 5]);
    }

    #[test]
    fn lone_spike_against_zero_mad() {
        let params = HampelParams {
            half_window: 2,
            n_sigma: 3.0,
        };
        let out = hampel(&[1.0, 1.0, 9.0, 1.0, 1.0], params);
        assert_eq!(out.filtered, vec![1.0; 5]);
        assert_eq!(out.outliers, vec![false, false, true, false, false]);
    }

    #[test]
    fn short_and_degenerate_inputs() {
        assert!(hampel(&[], HampelParams::default()).filtered.is_empty());
        assert_eq!(hampel(&[3.0], HampelParams::default()).filtered, vec![3.0]);
        let p = HampelParams {
            half_window: 0,
            n_sigma: 3.0,
        };
        assert_eq!(hampel(&[1.0, 100.0, 1.0], p).filtered, vec![1.0, 100.0, 1.0]);
    }

    #[test]
    fn matches_naive_oracle_bitwise() {
        let mut rng = ChaCha8Rng::seed_from_u64(2024);
        for (h, quantized) in [(5, false), (5, true), (1, false), (3, true), (12, false)] {
            let series: Vec<f64> = (0..10_000)
                .map(|_| {
                    let v: f64 = rng.gen_range(0.0..50.0);
                    let v = if rng.gen_bool(0.02) { v * 8.0 } else { v };
                    if quantized {
                        v.round()
                    } else {
                        v
                    }
                })
                .collect();
            let start = Instant::now();
            let out = hampel(
                &series,
                HampelParams {
                    half_window: h,
                    n_sigma: 3.0,
                },
            );
            assert!(start.elapsed().as_secs_f64() < 5.0);
            let (oracle, mask) = naive_hampel(&series, h, 3.0);
            assert_eq!(bits(&out.filtered), bits(&oracle), "h={h}");
            assert_eq!(out.outliers, mask);
        }
    }

    fn random_matrix(rng: &mut impl Rng, rows: usize) -> AmplitudeMatrix {
        let data = Array2::from_shape_fn((rows, SUBCARRIERS), |_| rng.gen_range(0.0..40.0f64).round());
        AmplitudeMatrix::new(data).unwrap()
    }

    #[test]
    fn matrix_filter_is_columnwise() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let m = random_matrix(&mut rng, 300);
        let out = hampel_matrix(&m, HampelParams::default());
        for col in 0..SUBCARRIERS {
            let column = m.view().column(col).to_vec();
            let expected = hampel(&column, HampelParams::default()).filtered;
            assert_eq!(out.view().column(col).to_vec(), expected);
        }
    }

    #[test]
    fn matrix_filter_leaves_constant_columns_and_isolates_spikes() {
        let base = Array2::from_shape_fn((50, SUBCARRIERS), |(_, c)| c as f64);
        let m = AmplitudeMatrix::new(base.clone()).unwrap();
        assert_eq!(hampel_matrix(&m, HampelParams::default()), m);

        let mut spiked = base.clone();
        spiked[[20, 7]] = 500.0;
        let out = hampel_matrix(&AmplitudeMatrix::new(spiked).unwrap(), HampelParams::default());
        assert_eq!(out.view(), base.view());
    }

    #[test]
    fn matrix_rejects_bad_shapes() {
        assert_eq!(
            AmplitudeMatrix::new(Array2::zeros((3, 51))),
            Err(MatrixError::ColumnCount(51))
        );
        assert!(AmplitudeMatrix::new(Array2::from_elem((3, SUBCARRIERS), -1.0)).is_err());
        let mut frames = vec![CsiFrame::zeroed(0, 0, 0)];
        frames[0].subcarriers.pop();
        assert!(matches!(
            AmplitudeMatrix::from_frames(&frames),
            Err(MatrixError::Frame(FrameError::SubcarrierCountMismatch { found: 51 }))
        ));
    }

    #[test]
    fn segmentation_counts() {
        for (t, expected) in [(399, 0), (400, 1), (401, 1), (1000, 2), (12_000, 30)] {
            let m = AmplitudeMatrix::new(Array2::zeros((t, SUBCARRIERS))).unwrap();
            assert_eq!(segment_windows(&m, WINDOW_LEN, WINDOW_LEN).len(), expected, "T={t}");
        }
        let m = AmplitudeMatrix::new(Array2::zeros((1000, SUBCARRIERS))).unwrap();
        let offsets: Vec<_> = segment_windows(&m, 400, 400).iter().map(|w| w.source_offset).collect();
        assert_eq!(offsets, vec![0, 400]);
        assert_eq!(segment_windows(&m, 400, 100).len(), 7);
    }

    #[test]
    fn windows_are_exact_subslices() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let m = random_matrix(&mut rng, 1234);
        for w in segment_windows(&m, 400, 150) {
            assert_eq!(w.data.dim(), (400, SUBCARRIERS));
            let expected = m
                .view()
                .slice(ndarray::s![w.source_offset..w.source_offset + 400, ..])
                .to_owned();
            assert_eq!(w.data, expected);
        }
    }

    #[test]
    fn zscore_behaviour() {
        let constant = Array2::from_elem((WINDOW_LEN, SUBCARRIERS), 7.5);
        assert!(zscore(constant.view()).iter().all(|&v| v == 0.0));

        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let window = Array2::from_shape_fn((WINDOW_LEN, SUBCARRIERS), |_| rng.gen_range(0.0..90.0));
        let z = zscore(window.view());
        let n = z.len() as f64;
        let mean = z.iter().sum::<f64>() / n;
        let std = (z.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
        assert!(mean.abs() < 1e-9);
        assert!((std - 1.0).abs() < 1e-6);

        let again = zscore(z.view());
        assert!(again.iter().zip(z.iter()).all(|(a, b)| (a - b).abs() < 1e-6));
    }

    #[test]
    fn circular_shift_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let window = Array2::from_shape_fn((WINDOW_LEN, SUBCARRIERS), |_| rng.gen::<f64>());
        assert_eq!(circular_shift(window.view(), 0), window);
        assert_eq!(circular_shift(window.view(), 400), window);
        assert_eq!(circular_shift(window.view(), -800), window);
        let shifted = circular_shift(window.view(), 3);
        assert_eq!(shifted.row(3), window.row(0));
        assert_eq!(shifted.row(0), window.row(397));
        for _ in 0..20 {
            let k = rng.gen_range(0..400);
            let back = circular_shift(circular_shift(window.view(), k).view(), 400 - k);
            assert_eq!(back, window);
        }
    }

    proptest! {
        #[test]
        fn hampel_never_increases_deviation_from_window_median(
            series in proptest::collection::vec(0.0f64..100.0, 1..200),
            h in 1usize..6,
        ) {
            let params = HampelParams { half_window: h, n_sigma: 3.0 };
            let out = hampel(&series, params);
            for t in 0..series.len() {
                let lo = t.saturating_sub(h);
                let hi = (t + h).min(series.len() - 1);
                let mut w = series[lo..=hi].to_vec();
                w.sort_by(f64::total_cmp);
                let m = median_of_sorted(&w);
                prop_assert!((out.filtered[t] - m).abs() <= (series[t] - m).abs());
            }
        }

        #[test]
        fn hampel_is_idempotent_when_second_pass_is_clean(
            series in proptest::collection::vec(0.0f64..100.0, 1..200),
        ) {
            let params = HampelParams::default();
            let once = hampel(&series, params);
            let twice = hampel(&once.filtered, params);
            if twice.replaced() == 0 {
                prop_assert_eq!(&twice.filtered, &once.filtered);
            }
        }

        #[test]
        fn circular_shift_preserves_column_multisets(k in -1000i64..1000, seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let window = Array2::from_shape_fn((40, 5), |_| rng.gen_range(0..10) as f64);
            let shifted = circular_shift(window.view(), k);
            for c in 0..5 {
                let mut a = window.column(c).to_vec();
                let mut b = shifted.column(c).to_vec();
                a.sort_by(f64::total_cmp);
                b.sort_by(f64::total_cmp);
                prop_assert_eq!(a, b);
            }
        }
    }
}
