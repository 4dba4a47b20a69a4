//! Symbolic drum scores on a tatum grid, onset quantization and the
//! conflict/far analysis of onsets a tatum-level score cannot represent.

use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Number of modeled instruments.
pub const NUM_INSTRUMENTS: usize = 3;

/// Default distance beyond which an onset counts as *far* from the grid.
pub const FAR_TOLERANCE: f64 = 0.050;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Instrument {
    #[serde(rename = "BD")]
    BassDrum,
    #[serde(rename = "SD")]
    SnareDrum,
    #[serde(rename = "HH")]
    HiHat,
}

impl Instrument {
    pub const ALL: [Instrument; NUM_INSTRUMENTS] = [
        Instrument::BassDrum,
        Instrument::SnareDrum,
        Instrument::HiHat,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Result<Self> {
        Self::ALL
            .get(i)
            .copied()
            .ok_or_else(|| Error::validation(format!("unknown instrument index {i}")))
    }

    pub fn abbrev(self) -> &'static str {
        match self {
            Instrument::BassDrum => "BD",
            Instrument::SnareDrum => "SD",
            Instrument::HiHat => "HH",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        let s = s.trim();
        if let Ok(i) = s.parse::<usize>() {
            return Self::from_index(i);
        }
        Self::ALL
            .into_iter()
            .find(|i| i.abbrev().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::validation(format!("unknown instrument {s:?}")))
    }
}

impl fmt::Display for Instrument {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.abbrev())
    }
}

/// Binary activation matrix, instruments x tatums.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct DrumScore {
    tatums: usize,
    // row-major [instrument][tatum]
    cells: Vec<bool>,
}

impl DrumScore {
    pub fn new(tatums: usize) -> Self {
        DrumScore {
            tatums,
            cells: vec![false; NUM_INSTRUMENTS * tatums],
        }
    }

    /// Builds a score from rows of 0/1 values, one row per instrument.
    pub fn from_rows(rows: &[Vec<u8>]) -> Result<Self> {
        if rows.len() != NUM_INSTRUMENTS {
            return Err(Error::validation(format!(
                "score needs {NUM_INSTRUMENTS} instrument rows, got {}",
                rows.len()
            )));
        }
        let n = rows[0].len();
        let mut score = DrumScore::new(n);
        for (m, row) in rows.iter().enumerate() {
            if row.len() != n {
                return Err(Error::validation("score rows differ in length"));
            }
            for (t, &v) in row.iter().enumerate() {
                match v {
                    0 => {}
                    1 => score.set(m, t, true),
                    other => {
                        return Err(Error::validation(format!("activation {other} is not 0/1")))
                    }
                }
            }
        }
        Ok(score)
    }

    /// Builds a score from tatum-major columns.
    pub fn from_columns(columns: &[[bool; NUM_INSTRUMENTS]]) -> Self {
        let mut s = DrumScore::new(columns.len());
        for (n, col) in columns.iter().enumerate() {
            for (m, &v) in col.iter().enumerate() {
                s.set(m, n, v);
            }
        }
        s
    }

    pub fn num_tatums(&self) -> usize {
        self.tatums
    }

    pub fn get(&self, instrument: usize, tatum: usize) -> bool {
        self.cells[instrument * self.tatums + tatum]
    }

    pub fn set(&mut self, instrument: usize, tatum: usize, active: bool) {
        self.cells[instrument * self.tatums + tatum] = active;
    }

    pub fn column(&self, tatum: usize) -> [bool; NUM_INSTRUMENTS] {
        std::array::from_fn(|m| self.get(m, tatum))
    }

    pub fn columns(&self) -> Vec<[bool; NUM_INSTRUMENTS]> {
        (0..self.tatums).map(|n| self.column(n)).collect()
    }

    pub fn rows(&self) -> Vec<Vec<u8>> {
        (0..NUM_INSTRUMENTS)
            .map(|m| (0..self.tatums).map(|n| self.get(m, n) as u8).collect())
            .collect()
    }

    pub fn onset_count(&self) -> usize {
        self.cells.iter().filter(|&&c| c).count()
    }

    /// Tatums `[start, start + len)` as a new score.
    pub fn slice(&self, start: usize, len: usize) -> DrumScore {
        let mut s = DrumScore::new(len);
        for m in 0..NUM_INSTRUMENTS {
            for n in 0..len {
                s.set(m, n, self.get(m, start + n));
            }
        }
        s
    }

    /// Tatum-major `[n, M]` 0/1 matrix, the layout used by the models.
    pub fn to_matrix(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.tatums * NUM_INSTRUMENTS);
        for n in 0..self.tatums {
            for m in 0..NUM_INSTRUMENTS {
                out.push(if self.get(m, n) { 1.0 } else { 0.0 });
            }
        }
        out
    }

    /// Onset times per instrument obtained by placing each activation at its
    /// tatum time.
    pub fn render_onsets(&self, grid: &TatumGrid) -> Result<Vec<OnsetEvent>> {
        if grid.len() != self.tatums {
            return Err(Error::validation(format!(
                "score has {} tatums but grid has {}",
                self.tatums,
                grid.len()
            )));
        }
        let mut events = Vec::with_capacity(self.onset_count());
        for n in 0..self.tatums {
            for inst in Instrument::ALL {
                if self.get(inst.index(), n) {
                    events.push(OnsetEvent {
                        instrument: inst,
                        time: grid.times()[n],
                    });
                }
            }
        }
        Ok(events)
    }

    pub fn to_json(&self) -> ScoreFile {
        ScoreFile {
            instruments: Instrument::ALL.to_vec(),
            activations: self.rows(),
        }
    }

    pub fn save_json(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(&self.to_json())?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load_json(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let file: ScoreFile =
            serde_json::from_str(&text).map_err(|e| Error::format(path, e.to_string()))?;
        file.into_score()
            .map_err(|e| Error::format(path, e.to_string()))
    }
}

/// On-disk JSON representation of a [`DrumScore`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoreFile {
    pub instruments: Vec<Instrument>,
    pub activations: Vec<Vec<u8>>,
}

impl ScoreFile {
    pub fn into_score(self) -> Result<DrumScore> {
        if self.instruments != Instrument::ALL {
            return Err(Error::validation("instrument order must be BD, SD, HH"));
        }
        DrumScore::from_rows(&self.activations)
    }
}

/// Strictly increasing tatum times in seconds.
#[derive(Clone, Debug, PartialEq)]
pub struct TatumGrid {
    times: Vec<f64>,
}

impl TatumGrid {
    pub fn new(times: Vec<f64>) -> Result<Self> {
        if times.is_empty() {
            return Err(Error::validation("tatum grid is empty"));
        }
        if let Some(t) = times.iter().find(|t| !t.is_finite() || **t < 0.0) {
            return Err(Error::validation(format!("invalid tatum time {t}")));
        }
        if let Some(w) = times.windows(2).find(|w| w[1] <= w[0]) {
            return Err(Error::validation(format!(
                "tatum times not strictly increasing: {} then {}",
                w[0], w[1]
            )));
        }
        Ok(TatumGrid { times })
    }

    /// Evenly spaced grid: `count` tatums of `interval` seconds from `start`.
    pub fn uniform(start: f64, interval: f64, count: usize) -> Result<Self> {
        Self::new((0..count).map(|i| start + i as f64 * interval).collect())
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    /// Nearest tatum to `time`; ties go to the earlier tatum.
    pub fn nearest(&self, time: f64) -> (usize, f64) {
        let idx = self.times.partition_point(|&t| t < time);
        let mut best = if idx == self.times.len() {
            idx - 1
        } else {
            idx
        };
        if idx > 0 {
            let prev = idx - 1;
            if (time - self.times[prev]).abs() <= (self.times[best] - time).abs() {
                best = prev;
            }
        }
        (best, (self.times[best] - time).abs())
    }

    /// 0-based frame index of each tatum at `frame_rate`, validated to be
    /// strictly increasing and inside `[0, num_frames)`.
    pub fn frame_indices(&self, frame_rate: f64, num_frames: usize) -> Result<Vec<usize>> {
        if num_frames == 0 {
            return Err(Error::validation("feature has no frames"));
        }
        let mut out = Vec::with_capacity(self.times.len());
        for &t in &self.times {
            let f = (t * frame_rate).round();
            if f >= num_frames as f64 {
                return Err(Error::validation(format!(
                    "tatum at {t:.3}s maps to frame {f} beyond {num_frames} frames"
                )));
            }
            let f = f as usize;
            if let Some(&last) = out.last() {
                if f <= last {
                    return Err(Error::validation(format!(
                        "tatums at frame {last} and {f} collide; pooling window would be empty"
                    )));
                }
            }
            out.push(f);
        }
        Ok(out)
    }

    /// Tatums `[start, start + len)`, re-based so the result can index a
    /// feature crop beginning at `offset` seconds.
    pub fn slice(&self, start: usize, len: usize, offset: f64) -> Result<TatumGrid> {
        TatumGrid::new(
            self.times[start..start + len]
                .iter()
                .map(|t| t - offset)
                .collect(),
        )
    }

    pub fn load_text(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut times = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let t: f64 = line.parse().map_err(|_| {
                Error::format(
                    path,
                    format!("line {}: bad tatum time {line:?}", lineno + 1),
                )
            })?;
            times.push(t);
        }
        TatumGrid::new(times).map_err(|e| Error::format(path, e.to_string()))
    }

    pub fn save_text(&self, path: &Path) -> Result<()> {
        let mut out = String::new();
        for t in &self.times {
            out.push_str(&format!("{t:.6}\n"));
        }
        std::fs::write(path, out).map_err(|e| Error::io(path, e))
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct OnsetEvent {
    pub instrument: Instrument,
    pub time: f64,
}

impl OnsetEvent {
    pub fn new(instrument: Instrument, time: f64) -> Self {
        OnsetEvent { instrument, time }
    }
}

/// Reads `time<TAB>instrument` lines; the instrument may be an index or
/// an abbreviation.
pub fn load_onsets(path: &Path) -> Result<Vec<OnsetEvent>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_onsets(&text).map_err(|e| Error::format(path, e.to_string()))
}

pub fn parse_onsets(text: &str) -> Result<Vec<OnsetEvent>> {
    let mut events = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let mut fields = line.split_whitespace();
        let (Some(time), Some(inst)) = (fields.next(), fields.next()) else {
            return Err(Error::validation(format!(
                "line {}: expected time and instrument",
                lineno + 1
            )));
        };
        let time: f64 = time
            .parse()
            .map_err(|_| Error::validation(format!("line {}: bad time {time:?}", lineno + 1)))?;
        if !time.is_finite() || time < 0.0 {
            return Err(Error::validation(format!(
                "line {}: negative time",
                lineno + 1
            )));
        }
        events.push(OnsetEvent::new(Instrument::parse(inst)?, time));
    }
    Ok(events)
}

pub fn format_onsets(events: &[OnsetEvent]) -> String {
    let mut sorted = events.to_vec();
    sorted.sort_by(|a, b| {
        a.time
            .total_cmp(&b.time)
            .then(a.instrument.cmp(&b.instrument))
    });
    let mut out = String::new();
    for e in sorted {
        out.push_str(&format!("{:.6}\t{}\n", e.time, e.instrument.index()));
    }
    out
}

pub fn save_onsets(path: &Path, events: &[OnsetEvent]) -> Result<()> {
    std::fs::write(path, format_onsets(events)).map_err(|e| Error::io(path, e))
}

/// Onset times of one instrument, sorted.
pub fn times_of(events: &[OnsetEvent], instrument: Instrument) -> Vec<f64> {
    let mut t: Vec<f64> = events
        .iter()
        .filter(|e| e.instrument == instrument)
        .map(|e| e.time)
        .collect();
    t.sort_by(f64::total_cmp);
    t
}

/// Onsets a tatum-level score cannot capture.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct UndetectableReport {
    pub total: usize,
    /// Onsets sharing their nearest tatum with a closer onset of the same
    /// instrument.
    pub conflict: usize,
    /// Onsets farther than the tolerance from every tatum.
    pub far: usize,
    /// Onsets in either group.
    pub union: usize,
}

impl UndetectableReport {
    fn ratio(&self, count: usize) -> f64 {
        if self.total == 0 {
            0.0
        } else {
            count as f64 / self.total as f64
        }
    }

    pub fn conflict_ratio(&self) -> f64 {
        self.ratio(self.conflict)
    }

    pub fn far_ratio(&self) -> f64 {
        self.ratio(self.far)
    }

    pub fn union_ratio(&self) -> f64 {
        self.ratio(self.union)
    }

    pub fn merge(&mut self, other: &UndetectableReport) {
        self.total += other.total;
        self.conflict += other.conflict;
        self.far += other.far;
        self.union += other.union;
    }
}

/// Quantizes onsets to their nearest tatums.
///
/// Within each (instrument, tatum) group the closest onset is the detected
/// one and the others count as *conflict*. Onsets more than `tolerance`
/// seconds from their nearest tatum count as *far* and set no activation.
pub fn quantize_onsets(
    events: &[OnsetEvent],
    grid: &TatumGrid,
    tolerance: f64,
) -> Result<(DrumScore, UndetectableReport)> {
    if !(tolerance >= 0.0) {
        return Err(Error::validation("tolerance must be non-negative"));
    }
    let n = grid.len();
    // (instrument, tatum) -> distances of every onset mapped there
    let mut groups: Vec<Vec<f64>> = vec![Vec::new(); NUM_INSTRUMENTS * n];
    for e in events {
        if !e.time.is_finite() || e.time < 0.0 {
            return Err(Error::validation(format!("invalid onset time {}", e.time)));
        }
        let (tatum, dist) = grid.nearest(e.time);
        groups[e.instrument.index() * n + tatum].push(dist);
    }
    let mut score = DrumScore::new(n);
    let mut report = UndetectableReport {
        total: events.len(),
        ..Default::default()
    };
    for (slot, dists) in groups.iter_mut().enumerate() {
        if dists.is_empty() {
            continue;
        }
        dists.sort_by(f64::total_cmp);
        let far_count = dists.iter().filter(|&&d| d > tolerance).count();
        report.far += far_count;
        report.conflict += dists.len() - 1;
        // the closest onset is the detected one; every other onset is a
        // conflict, and the detected one is additionally far if it is
        report.union += dists.len() - 1 + usize::from(dists[0] > tolerance);
        if dists[0] <= tolerance {
            score.set(slot / n, slot % n, true);
        }
    }
    Ok((score, report))
}

/// Thresholds onset probabilities (`[n, M]`, tatum-major) at `delta`,
/// inclusive.
pub fn binarize(phi: &OnsetProbabilities, delta: f64) -> Result<DrumScore> {
    if !(0.0..=1.0).contains(&delta) {
        return Err(Error::validation(format!(
            "threshold {delta} outside [0, 1]"
        )));
    }
    let mut score = DrumScore::new(phi.num_tatums());
    for n in 0..phi.num_tatums() {
        for m in 0..NUM_INSTRUMENTS {
            score.set(m, n, phi.get(m, n) >= delta);
        }
    }
    Ok(score)
}

/// Tatum-level onset probabilities in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct OnsetProbabilities {
    tatums: usize,
    // tatum-major [n][m]
    values: Vec<f64>,
}

impl OnsetProbabilities {
    /// From a tatum-major `[n, M]` buffer.
    pub fn from_tatum_major(tatums: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != tatums * NUM_INSTRUMENTS {
            return Err(Error::validation("probability buffer has wrong length"));
        }
        if let Some(v) = values.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::validation(format!("probability {v} outside [0, 1]")));
        }
        Ok(OnsetProbabilities { tatums, values })
    }

    /// From rows, one per instrument.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        if rows.len() != NUM_INSTRUMENTS {
            return Err(Error::validation("need one row per instrument"));
        }
        let n = rows[0].len();
        if rows.iter().any(|r| r.len() != n) {
            return Err(Error::validation("probability rows differ in length"));
        }
        let mut values = Vec::with_capacity(n * NUM_INSTRUMENTS);
        for t in 0..n {
            for row in rows {
                values.push(row[t]);
            }
        }
        Self::from_tatum_major(n, values)
    }

    pub fn num_tatums(&self) -> usize {
        self.tatums
    }

    pub fn get(&self, instrument: usize, tatum: usize) -> f64 {
        self.values[tatum * NUM_INSTRUMENTS + instrument]
    }

    pub fn tatum_major(&self) -> &[f64] {
        &self.values
    }

    pub fn rows(&self) -> Vec<Vec<f64>> {
        (0..NUM_INSTRUMENTS)
            .map(|m| (0..self.tatums).map(|n| self.get(m, n)).collect())
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;

    fn grid16() -> TatumGrid {
        TatumGrid::uniform(0.0, 0.125, 16).unwrap()
    }

    #[test]
    fn exact_onset_activates_without_loss() {
        let grid = grid16();
        let ev = [OnsetEvent::new(Instrument::BassDrum, grid.times()[5])];
        let (score, rep) = quantize_onsets(&ev, &grid, FAR_TOLERANCE).unwrap();
        assert!(score.get(0, 5));
        assert_eq!(score.onset_count(), 1);
        assert_eq!((rep.conflict, rep.far, rep.union), (0, 0, 0));
    }

    #[test]
    fn two_onsets_on_one_tatum_conflict() {
        let grid = grid16();
        let t5 = grid.times()[5];
        let ev = [
            OnsetEvent::new(Instrument::BassDrum, t5 - 0.01),
            OnsetEvent::new(Instrument::BassDrum, t5 + 0.02),
        ];
        let (score, rep) = quantize_onsets(&ev, &grid, FAR_TOLERANCE).unwrap();
        assert!(score.get(0, 5));
        assert_eq!(rep.conflict, 1);
        assert_eq!(rep.far, 0);
        assert_eq!(rep.union, 1);
    }

    #[test]
    fn distant_onset_is_far_and_inactive() {
        let grid = TatumGrid::uniform(0.0, 0.25, 8).unwrap();
        let ev = [OnsetEvent::new(Instrument::HiHat, 0.5 + 0.060)];
        let (score, rep) = quantize_onsets(&ev, &grid, FAR_TOLERANCE).unwrap();
        assert_eq!(rep.far, 1);
        assert_eq!(rep.union, 1);
        assert_eq!(score.onset_count(), 0);
    }

    #[test]
    fn conflict_and_far_can_overlap() {
        let grid = TatumGrid::uniform(0.0, 0.25, 4).unwrap();
        // both nearest to tatum 1 (0.25), both farther than 50 ms
        let ev = [
            OnsetEvent::new(Instrument::SnareDrum, 0.25 + 0.06),
            OnsetEvent::new(Instrument::SnareDrum, 0.25 + 0.08),
        ];
        let (score, rep) = quantize_onsets(&ev, &grid, FAR_TOLERANCE).unwrap();
        assert_eq!((rep.conflict, rep.far, rep.union), (1, 2, 2));
        assert!(rep.union <= rep.conflict + rep.far);
        assert_eq!(score.onset_count(), 0);
    }

    #[test]
    fn ties_go_to_earlier_tatum() {
        let grid = TatumGrid::new(vec![0.0, 0.2]).unwrap();
        assert_eq!(grid.nearest(0.1).0, 0);
        assert_eq!(grid.nearest(0.1000001).0, 1);
        assert_eq!(grid.nearest(5.0).0, 1);
    }

    #[test]
    fn non_monotone_grid_rejected() {
        assert!(TatumGrid::new(vec![0.0, 0.5, 0.5]).is_err());
        assert!(TatumGrid::new(vec![0.0, 0.5, 0.4]).is_err());
        assert!(TatumGrid::new(vec![]).is_err());
    }

    #[test]
    fn unknown_instrument_rejected() {
        assert!(Instrument::from_index(3).is_err());
        assert!(parse_onsets("0.5\t7\n").is_err());
        assert!(DrumScore::from_rows(&[vec![0], vec![2], vec![0]]).is_err());
    }

    #[test]
    fn binarize_threshold_is_inclusive() {
        let zeros =
            OnsetProbabilities::from_rows(&[vec![0.0; 4], vec![0.0; 4], vec![0.0; 4]]).unwrap();
        assert_eq!(binarize(&zeros, 0.2).unwrap().onset_count(), 0);

        let mut rows = vec![vec![0.1; 5]; 3];
        rows[1][3] = 0.25;
        let s = binarize(&OnsetProbabilities::from_rows(&rows).unwrap(), 0.2).unwrap();
        assert_eq!(s.onset_count(), 1);
        assert!(s.get(1, 3));

        let edge = OnsetProbabilities::from_rows(&[vec![0.2], vec![0.19999], vec![0.2]]).unwrap();
        let s = binarize(&edge, 0.2).unwrap();
        assert_eq!(s.column(0), [true, false, true]);
        assert_eq!(binarize(&edge, 0.0).unwrap().onset_count(), 3);
    }

    #[test]
    fn text_formats_round_trip() {
        let ev = vec![
            OnsetEvent::new(Instrument::SnareDrum, 0.5),
            OnsetEvent::new(Instrument::BassDrum, 0.25),
        ];
        let parsed = parse_onsets(&format_onsets(&ev)).unwrap();
        assert_eq!(parsed[0], ev[1]);
        assert_eq!(parsed[1], ev[0]);
        assert_eq!(
            parse_onsets("# c\n1.0 HH\n").unwrap()[0].instrument,
            Instrument::HiHat
        );

        let dir = tempfile::tempdir().unwrap();
        let score = DrumScore::from_rows(&[vec![1, 0, 1], vec![0, 1, 0], vec![1, 1, 1]]).unwrap();
        let p = dir.path().join("s.json");
        score.save_json(&p).unwrap();
        assert_eq!(DrumScore::load_json(&p).unwrap(), score);
        let grid = TatumGrid::uniform(0.1, 0.125, 3).unwrap();
        let gp = dir.path().join("t.txt");
        grid.save_text(&gp).unwrap();
        assert_eq!(TatumGrid::load_text(&gp).unwrap(), grid);
    }

    fn arb_score() -> impl Strategy<Value = (usize, Vec<bool>)> {
        (1usize..40).prop_flat_map(|n| (Just(n), proptest::collection::vec(any::<bool>(), n * 3)))
    }

    proptest! {
        #[test]
        fn clean_round_trip((n, cells) in arb_score(), interval in 0.08f64..0.3) {
            let grid = TatumGrid::uniform(0.2, interval, n).unwrap();
            let mut score = DrumScore::new(n);
            for (i, &c) in cells.iter().enumerate() {
                score.set(i / n, i % n, c);
            }
            let events = score.render_onsets(&grid).unwrap();
            let (back, rep) = quantize_onsets(&events, &grid, FAR_TOLERANCE).unwrap();
            prop_assert_eq!(rep.union, 0);
            prop_assert_eq!(&back, &score);
            let rendered = back.render_onsets(&grid).unwrap();
            prop_assert_eq!(rendered, events);
        }

        #[test]
        fn totals_balance_without_far(
            n in 2usize..20,
            jitter in proptest::collection::vec((0usize..3, 0usize..20, -0.04f64..0.04), 0..60),
        ) {
            let grid = TatumGrid::uniform(0.5, 0.125, n).unwrap();
            let events: Vec<OnsetEvent> = jitter
                .iter()
                .map(|&(m, k, d)| OnsetEvent::new(Instrument::ALL[m], grid.times()[k % n] + d))
                .collect();
            let (score, rep) = quantize_onsets(&events, &grid, FAR_TOLERANCE).unwrap();
            prop_assert_eq!(rep.far, 0);
            prop_assert_eq!(rep.total, score.onset_count() + rep.conflict);
            prop_assert!(rep.union <= rep.conflict + rep.far);
        }

        #[test]
        fn binarize_is_monotone(
            vals in proptest::collection::vec(0.0f64..1.0, 3..60),
            bump in 0.0f64..1.0,
            idx in 0usize..60,
            delta in 0.0f64..1.0,
        ) {
            let n = vals.len() / 3;
            let vals = vals[..n * 3].to_vec();
            let before = binarize(&OnsetProbabilities::from_tatum_major(n, vals.clone()).unwrap(), delta).unwrap();
            let mut raised = vals;
            let i = idx % raised.len();
            raised[i] = (raised[i] + bump).min(1.0);
            let after = binarize(&OnsetProbabilities::from_tatum_major(n, raised).unwrap(), delta).unwrap();
            for m in 0..NUM_INSTRUMENTS {
                for t in 0..n {
                    prop_assert!(!before.get(m, t) || after.get(m, t));
                }
            }
        }
    }
}
