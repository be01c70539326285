//! Event-log schema, CSV ingestion, standardization, and the stratified
//! validation-split protocol. The synthetic mission simulator lives in
//! [`simulate`].
//!
//! CSV schema (header required, UTF-8, comma separated, `#` comment lines
//! allowed before the header):
//!
//! ```text
//! time_s,tx_x_m,tx_y_m,rx_x_m,rx_y_m,tx_var_x_m2,tx_var_y_m2,rx_var_x_m2,rx_var_y_m2,label,snr_db
//! ```
//!
//! `snr_db` is empty exactly when `label` is 0: the modem only reports an
//! SNR for decoded packets.

pub mod simulate;

use std::io::Write;
use std::path::Path;

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::optim::{rng::stream_ids, seeded_stream};
use crate::INPUT_DIM;

pub use simulate::{simulate_mission, GroundTruth, ShadowZone, SimConfig};

/// One transmit/receive attempt between two vehicles.
#[derive(Debug, Clone, PartialEq)]
pub struct CommEvent {
    pub time_s: f64,
    pub tx_pos: [f64; 2],
    pub rx_pos: [f64; 2],
    /// Diagonal navigation covariance of the transmitter position, m².
    pub tx_var: [f64; 2],
    pub rx_var: [f64; 2],
    /// 1 = packet decoded.
    pub label: u8,
    /// Present exactly when `label == 1`.
    pub snr_db: Option<f64>,
}

impl CommEvent {
    /// Model input `(tx_x, tx_y, rx_x, rx_y)`.
    pub fn input(&self) -> [f64; INPUT_DIM] {
        [self.tx_pos[0], self.tx_pos[1], self.rx_pos[0], self.rx_pos[1]]
    }

    /// Diagonal input-noise variance aligned with [`Self::input`].
    pub fn input_var(&self) -> [f64; INPUT_DIM] {
        [self.tx_var[0], self.tx_var[1], self.rx_var[0], self.rx_var[1]]
    }

    pub fn validate(&self) -> Result<()> {
        let mut fields = vec![self.time_s];
        fields.extend_from_slice(&self.tx_pos);
        fields.extend_from_slice(&self.rx_pos);
        fields.extend_from_slice(&self.tx_var);
        fields.extend_from_slice(&self.rx_var);
        crate::require_finite("event fields", &fields)?;
        if self.label > 1 {
            return Err(Error::Data(format!("label must be 0 or 1, got {}", self.label)));
        }
        if self.tx_var.iter().chain(&self.rx_var).any(|&v| v < 0.0) {
            return Err(Error::Data("negative navigation variance".into()));
        }
        match (self.label, self.snr_db) {
            (1, Some(s)) if s.is_finite() => Ok(()),
            (1, Some(_)) => Err(Error::Data("non-finite snr_db".into())),
            (1, None) => Err(Error::Data("successful event missing snr_db".into())),
            (0, None) => Ok(()),
            (0, Some(_)) => Err(Error::Data(
                "snr_db present on unsuccessful event".into(),
            )),
            _ => unreachable!(),
        }
    }
}

/// A named collection of events, optionally carrying the simulator ground
/// truth for oracle checks.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub name: String,
    pub events: Vec<CommEvent>,
    pub ground_truth: Option<GroundTruth>,
}

impl Dataset {
    pub fn n_success(&self) -> usize {
        self.events.iter().filter(|e| e.label == 1).count()
    }

    pub fn n_failure(&self) -> usize {
        self.events.len() - self.n_success()
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct CsvRow {
    time_s: f64,
    tx_x_m: f64,
    tx_y_m: f64,
    rx_x_m: f64,
    rx_y_m: f64,
    tx_var_x_m2: f64,
    tx_var_y_m2: f64,
    rx_var_x_m2: f64,
    rx_var_y_m2: f64,
    label: u8,
    snr_db: Option<f64>,
}

impl From<&CommEvent> for CsvRow {
    fn from(e: &CommEvent) -> Self {
        CsvRow {
            time_s: e.time_s,
            tx_x_m: e.tx_pos[0],
            tx_y_m: e.tx_pos[1],
            rx_x_m: e.rx_pos[0],
            rx_y_m: e.rx_pos[1],
            tx_var_x_m2: e.tx_var[0],
            tx_var_y_m2: e.tx_var[1],
            rx_var_x_m2: e.rx_var[0],
            rx_var_y_m2: e.rx_var[1],
            label: e.label,
            snr_db: e.snr_db,
        }
    }
}

impl From<CsvRow> for CommEvent {
    fn from(r: CsvRow) -> Self {
        CommEvent {
            time_s: r.time_s,
            tx_pos: [r.tx_x_m, r.tx_y_m],
            rx_pos: [r.rx_x_m, r.rx_y_m],
            tx_var: [r.tx_var_x_m2, r.tx_var_y_m2],
            rx_var: [r.rx_var_x_m2, r.rx_var_y_m2],
            label: r.label,
            snr_db: r.snr_db,
        }
    }
}

/// Parses an event log. Row numbers in errors are 1-based file lines.
pub fn load_events(path: impl AsRef<Path>) -> Result<Dataset> {
    let path = path.as_ref();
    let file = std::fs::File::open(path)
        .map_err(|e| Error::Data(format!("cannot open {}: {e}", path.display())))?;
    let mut reader = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_reader(file);
    let mut events = Vec::new();
    for row in reader.deserialize::<CsvRow>() {
        let row = row.map_err(|e| {
            let line = e
                .position()
                .map(|p| p.line().to_string())
                .unwrap_or_else(|| "?".into());
            Error::Data(format!("{}: line {line}: {e}", path.display()))
        })?;
        let event: CommEvent = row.into();
        event.validate().map_err(|e| {
            Error::Data(format!(
                "{}: event {}: {e}",
                path.display(),
                events.len() + 1
            ))
        })?;
        events.push(event);
    }
    if events.is_empty() {
        return Err(Error::Data(format!(
            "{}: no events in file",
            path.display()
        )));
    }
    let name = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "dataset".into());
    Ok(Dataset {
        name,
        events,
        ground_truth: None,
    })
}

/// Writes an event log, prefixed with optional `#` metadata lines.
pub fn save_events(path: impl AsRef<Path>, ds: &Dataset, meta: &[String]) -> Result<()> {
    let path = path.as_ref();
    let mut file = std::fs::File::create(path)
        .map_err(|e| Error::Data(format!("cannot create {}: {e}", path.display())))?;
    for line in meta {
        writeln!(file, "# {line}").map_err(|e| Error::Data(e.to_string()))?;
    }
    let mut writer = csv::Writer::from_writer(file);
    for event in &ds.events {
        writer
            .serialize(CsvRow::from(event))
            .map_err(|e| Error::Data(e.to_string()))?;
    }
    writer.flush().map_err(|e| Error::Data(e.to_string()))?;
    Ok(())
}

/// Validation-split protocol: independent stratified draws.
#[derive(Debug, Clone)]
pub struct SplitSpec {
    pub n_splits: usize,
    pub validation_fraction: f64,
    pub seed: u64,
}

impl Default for SplitSpec {
    fn default() -> Self {
        SplitSpec {
            n_splits: 20,
            validation_fraction: 0.20,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Split {
    pub train: Vec<usize>,
    pub validation: Vec<usize>,
}

/// Draws `n_splits` independent stratified splits: the validation set holds
/// the configured fraction of each class (rounded, floored at one event per
/// class) so class proportions are preserved.
pub fn make_splits(ds: &Dataset, spec: &SplitSpec) -> Result<Vec<Split>> {
    if spec.n_splits == 0 {
        return Err(Error::InvalidParameter("n_splits must be >= 1".into()));
    }
    if !(spec.validation_fraction > 0.0 && spec.validation_fraction < 1.0) {
        return Err(Error::InvalidParameter(format!(
            "validation fraction {} outside (0, 1)",
            spec.validation_fraction
        )));
    }
    let mut by_class: [Vec<usize>; 2] = [Vec::new(), Vec::new()];
    for (i, e) in ds.events.iter().enumerate() {
        by_class[e.label as usize].push(i);
    }
    for (label, members) in by_class.iter().enumerate() {
        if members.len() < 2 {
            return Err(Error::Data(format!(
                "class {label} has {} event(s); need at least 2 for stratified splits",
                members.len()
            )));
        }
    }
    let mut splits = Vec::with_capacity(spec.n_splits);
    for s in 0..spec.n_splits {
        let mut rng = seeded_stream(spec.seed, stream_ids::SPLITS_BASE + s as u64);
        let mut validation = Vec::new();
        let mut train = Vec::new();
        for members in &by_class {
            let mut shuffled = members.clone();
            // Fisher-Yates driven by the split stream.
            for i in (1..shuffled.len()).rev() {
                let j = rand::Rng::random_range(&mut rng, 0..=i);
                shuffled.swap(i, j);
            }
            let n_val = ((members.len() as f64 * spec.validation_fraction).round() as usize)
                .clamp(1, members.len() - 1);
            validation.extend_from_slice(&shuffled[..n_val]);
            train.extend_from_slice(&shuffled[n_val..]);
        }
        validation.sort_unstable();
        train.sort_unstable();
        splits.push(Split { train, validation });
    }
    Ok(splits)
}

/// Regression view of a training split: inputs and SNR targets of the
/// successful events only.
pub fn regression_view(ds: &Dataset, indices: &[usize]) -> Result<(Array2<f64>, Array1<f64>)> {
    let successes: Vec<&CommEvent> = indices
        .iter()
        .map(|&i| &ds.events[i])
        .filter(|e| e.label == 1)
        .collect();
    if successes.is_empty() {
        return Err(Error::Data(
            "no successful events in split; regression view is empty".into(),
        ));
    }
    let mut x = Array2::zeros((successes.len(), INPUT_DIM));
    let mut y = Array1::zeros(successes.len());
    for (r, e) in successes.iter().enumerate() {
        let input = e.input();
        for (c, v) in input.iter().enumerate() {
            x[[r, c]] = *v;
        }
        y[r] = e.snr_db.expect("validated successful event has snr");
    }
    Ok((x, y))
}

/// Classification view: all events of the split, inputs plus binary labels.
pub fn classification_view(ds: &Dataset, indices: &[usize]) -> (Array2<f64>, Vec<u8>) {
    let mut x = Array2::zeros((indices.len(), INPUT_DIM));
    let mut y = Vec::with_capacity(indices.len());
    for (r, &i) in indices.iter().enumerate() {
        let input = ds.events[i].input();
        for (c, v) in input.iter().enumerate() {
            x[[r, c]] = *v;
        }
        y.push(ds.events[i].label);
    }
    (x, y)
}

/// Per-column affine standardizer fitted on training statistics.
#[derive(Debug, Clone, PartialEq)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub sd: Vec<f64>,
}

pub const SD_FLOOR: f64 = 1e-9;

impl Standardizer {
    pub fn fit(x: &Array2<f64>) -> Self {
        let n = x.nrows() as f64;
        let mut mean = vec![0.0; x.ncols()];
        let mut sd = vec![0.0; x.ncols()];
        for c in 0..x.ncols() {
            let col = x.column(c);
            let m = col.sum() / n;
            let var = col.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / n;
            mean[c] = m;
            let s = var.sqrt();
            if s < SD_FLOOR {
                log::warn!("standardizer: column {c} has (near-)zero variance; flooring SD");
                sd[c] = SD_FLOOR;
            } else {
                sd[c] = s;
            }
        }
        Standardizer { mean, sd }
    }

    pub fn fit_scalar(y: &Array1<f64>) -> Self {
        let col = Array2::from_shape_vec((y.len(), 1), y.to_vec()).expect("shape");
        Self::fit(&col)
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn transform_point(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .zip(self.mean.iter().zip(&self.sd))
            .map(|(v, (m, s))| (v - m) / s)
            .collect()
    }

    pub fn inverse_point(&self, z: &[f64]) -> Vec<f64> {
        z.iter()
            .zip(self.mean.iter().zip(&self.sd))
            .map(|(v, (m, s))| v * s + m)
            .collect()
    }

    pub fn transform_matrix(&self, x: &Array2<f64>) -> Array2<f64> {
        let mut out = x.clone();
        for mut row in out.rows_mut() {
            for c in 0..row.len() {
                row[c] = (row[c] - self.mean[c]) / self.sd[c];
            }
        }
        out
    }

    /// Scalar (single-column) transforms for targets.
    pub fn transform_scalar(&self, v: f64) -> f64 {
        (v - self.mean[0]) / self.sd[0]
    }

    pub fn inverse_scalar(&self, z: f64) -> f64 {
        z * self.sd[0] + self.mean[0]
    }

    pub fn inverse_scalar_variance(&self, var: f64) -> f64 {
        var * self.sd[0] * self.sd[0]
    }

    /// Rescales a diagonal noise variance: Var((x - m)/s) = Var(x)/s².
    pub fn transform_variance(&self, v: &[f64]) -> Vec<f64> {
        v.iter()
            .zip(&self.sd)
            .map(|(var, s)| var / (s * s))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn event(label: u8, snr: Option<f64>) -> CommEvent {
        CommEvent {
            time_s: 0.0,
            tx_pos: [1.0, 2.0],
            rx_pos: [3.0, 4.0],
            tx_var: [0.5, 0.5],
            rx_var: [0.0, 0.0],
            label,
            snr_db: snr,
        }
    }

    fn toy_dataset(n_success: usize, n_fail: usize) -> Dataset {
        let mut events = Vec::new();
        for i in 0..n_success {
            let mut e = event(1, Some(10.0 + i as f64));
            e.time_s = i as f64;
            e.tx_pos = [i as f64, 0.0];
            events.push(e);
        }
        for i in 0..n_fail {
            let mut e = event(0, None);
            e.time_s = (n_success + i) as f64;
            e.tx_pos = [0.0, i as f64];
            events.push(e);
        }
        Dataset {
            name: "toy".into(),
            events,
            ground_truth: None,
        }
    }

    #[test]
    fn snr_on_failed_event_rejected() {
        assert!(event(0, Some(5.0)).validate().is_err());
        assert!(event(1, None).validate().is_err());
        assert!(event(1, Some(5.0)).validate().is_ok());
        assert!(event(0, None).validate().is_ok());
    }

    #[test]
    fn csv_round_trip_is_field_exact() {
        let dir = std::env::temp_dir().join("commap_data_test");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("round_trip.csv");
        let ds = Dataset {
            name: "round_trip".into(),
            events: vec![
                CommEvent {
                    time_s: 1.5,
                    tx_pos: [0.123456789, -2.0],
                    rx_pos: [300.25, -120.5],
                    tx_var: [2.25, 2.25],
                    rx_var: [0.0, 0.1],
                    label: 1,
                    snr_db: Some(12.75),
                },
                event(0, None),
                CommEvent {
                    time_s: 3.0,
                    tx_pos: [1e-12, 1e12],
                    rx_pos: [0.1 + 0.2, 0.3],
                    tx_var: [0.0, 0.0],
                    rx_var: [0.0, 0.0],
                    label: 0,
                    snr_db: None,
                },
            ],
            ground_truth: None,
        };
        save_events(&path, &ds, &["seed=7".into()]).unwrap();
        let loaded = load_events(&path).unwrap();
        assert_eq!(loaded.events, ds.events);
    }

    #[test]
    fn header_only_file_is_empty_dataset_error() {
        let dir = std::env::temp_dir().join("commap_data_test");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("empty.csv");
        std::fs::write(
            &path,
            "time_s,tx_x_m,tx_y_m,rx_x_m,rx_y_m,tx_var_x_m2,tx_var_y_m2,rx_var_x_m2,rx_var_y_m2,label,snr_db\n",
        )
        .unwrap();
        let err = load_events(&path).unwrap_err();
        assert!(err.to_string().contains("no events"), "{err}");
    }

    #[test]
    fn malformed_row_reports_line_number() {
        let dir = std::env::temp_dir().join("commap_data_test");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("bad.csv");
        std::fs::write(
            &path,
            "time_s,tx_x_m,tx_y_m,rx_x_m,rx_y_m,tx_var_x_m2,tx_var_y_m2,rx_var_x_m2,rx_var_y_m2,label,snr_db\n\
             0,0,0,0,0,0,0,0,0,1,10.0\n\
             1,0,0,0,0,0,0,0,0,oops,\n",
        )
        .unwrap();
        let err = load_events(&path).unwrap_err();
        assert!(err.to_string().contains("line 3"), "{err}");
    }

    #[test]
    fn snr_on_failure_rejected_at_load() {
        let dir = std::env::temp_dir().join("commap_data_test");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("bad_snr.csv");
        std::fs::write(
            &path,
            "time_s,tx_x_m,tx_y_m,rx_x_m,rx_y_m,tx_var_x_m2,tx_var_y_m2,rx_var_x_m2,rx_var_y_m2,label,snr_db\n\
             0,0,0,0,0,0,0,0,0,0,9.5\n",
        )
        .unwrap();
        assert!(load_events(&path).is_err());
    }

    #[test]
    fn stratified_counts_match_dataset1_shape() {
        // 72 successes + 144 failures at fraction 0.2 -> 14 + 29 validation.
        let ds = toy_dataset(72, 144);
        let splits = make_splits(&ds, &SplitSpec::default()).unwrap();
        assert_eq!(splits.len(), 20);
        for split in &splits {
            let n_val_success = split
                .validation
                .iter()
                .filter(|&&i| ds.events[i].label == 1)
                .count();
            let n_val_fail = split.validation.len() - n_val_success;
            assert_eq!(n_val_success, 14);
            assert_eq!(n_val_fail, 29);
            assert_eq!(split.train.len() + split.validation.len(), 216);
        }
    }

    #[test]
    fn splits_are_disjoint_exhaustive_and_deterministic() {
        let ds = toy_dataset(20, 11);
        let spec = SplitSpec {
            n_splits: 5,
            validation_fraction: 0.2,
            seed: 99,
        };
        let a = make_splits(&ds, &spec).unwrap();
        let b = make_splits(&ds, &spec).unwrap();
        for (sa, sb) in a.iter().zip(&b) {
            assert_eq!(sa.train, sb.train);
            assert_eq!(sa.validation, sb.validation);
            let mut all: Vec<usize> = sa.train.iter().chain(&sa.validation).copied().collect();
            all.sort_unstable();
            assert_eq!(all, (0..31).collect::<Vec<_>>());
        }
    }

    #[test]
    fn tiny_fraction_floors_at_one_per_class() {
        let ds = toy_dataset(10, 5);
        let spec = SplitSpec {
            n_splits: 1,
            validation_fraction: 1e-6,
            seed: 0,
        };
        let splits = make_splits(&ds, &spec).unwrap();
        assert_eq!(splits[0].validation.len(), 2); // one per class
    }

    #[test]
    fn single_member_class_is_rejected() {
        let ds = toy_dataset(1, 5);
        assert!(make_splits(&ds, &SplitSpec::default()).is_err());
    }

    #[test]
    fn regression_view_filters_successes() {
        let ds = toy_dataset(5, 7);
        let indices: Vec<usize> = (0..12).collect();
        let (x, y) = regression_view(&ds, &indices).unwrap();
        assert_eq!(x.nrows(), 5);
        assert_eq!(y.len(), 5);
        // Counting oracle on a fixed subset.
        let subset = vec![0, 2, 5, 6, 11];
        let expected = subset
            .iter()
            .filter(|&&i| ds.events[i].label == 1)
            .count();
        let (xs, _) = regression_view(&ds, &subset).unwrap();
        assert_eq!(xs.nrows(), expected);
        // All-failure split errors.
        assert!(regression_view(&ds, &[5, 6, 7]).is_err());
    }

    #[test]
    fn all_success_split_matches_classification_inputs() {
        let ds = toy_dataset(6, 2);
        let indices: Vec<usize> = (0..6).collect();
        let (xr, _) = regression_view(&ds, &indices).unwrap();
        let (xc, labels) = classification_view(&ds, &indices);
        assert_eq!(xr, xc);
        assert!(labels.iter().all(|&l| l == 1));
    }

    #[test]
    fn standardizer_round_trips_and_floors_constant_columns() {
        let x = array![[1.0, 5.0], [2.0, 5.0], [4.0, 5.0]];
        let st = Standardizer::fit(&x);
        assert_eq!(st.sd[1], SD_FLOOR);
        let z = st.transform_point(&[3.0, 5.0]);
        let back = st.inverse_point(&z);
        assert!((back[0] - 3.0).abs() < 1e-12);
        assert!((back[1] - 5.0).abs() < 1e-12);

        // Already standardized data -> near-identity transform.
        let big = {
            let mut rng = crate::optim::seeded_stream(2, 0);
            Array2::from_shape_fn((500, 2), |_| crate::optim::standard_normal(&mut rng))
        };
        let st2 = Standardizer::fit(&big);
        assert!(st2.mean.iter().all(|m| m.abs() < 0.15));
        assert!(st2.sd.iter().all(|s| (s - 1.0).abs() < 0.15));
    }

    #[test]
    fn variance_scaling_preserves_noise_model() {
        // standardize(x + eps) = standardize(x) + eps / sd.
        let x = array![[0.0, 0.0], [2.0, 10.0], [4.0, 20.0], [8.0, 25.0]];
        let st = Standardizer::fit(&x);
        let v = [4.0, 9.0];
        let scaled = st.transform_variance(&v);
        for c in 0..2 {
            assert!((scaled[c] - v[c] / (st.sd[c] * st.sd[c])).abs() < 1e-15);
        }
    }
}
