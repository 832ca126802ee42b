//! Split and merge detection between per-window partitions.
//!
//! A split is an optical cluster whose pixels spread over several stacked
//! clusters; a merge is a SAR cluster that absorbs several stacked clusters
//! almost entirely. Both are read off contingency tables.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::raster::{Bounds, Mask};

/// Cross-tabulation of two labelings of the same pixels.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ContingencyTable {
    rows: usize,
    cols: usize,
    counts: Vec<usize>,
}

impl ContingencyTable {
    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn get(&self, row: usize, col: usize) -> usize {
        self.counts[row * self.cols + col]
    }

    pub fn row(&self, row: usize) -> &[usize] {
        &self.counts[row * self.cols..(row + 1) * self.cols]
    }

    pub fn row_sum(&self, row: usize) -> usize {
        self.row(row).iter().sum()
    }

    pub fn col_sum(&self, col: usize) -> usize {
        (0..self.rows).map(|r| self.get(r, col)).sum()
    }

    pub fn total(&self) -> usize {
        self.counts.iter().sum()
    }
}

/// `counts[a][b]` is the number of pixels labeled `a` in `pa` and `b` in `pb`.
pub fn contingency(pa: &[usize], pb: &[usize]) -> Result<ContingencyTable> {
    if pa.len() != pb.len() {
        return Err(Error::Shape(format!(
            "partitions of {} and {} pixels",
            pa.len(),
            pb.len()
        )));
    }
    let rows = pa.iter().max().map_or(0, |m| m + 1);
    let cols = pb.iter().max().map_or(0, |m| m + 1);
    let mut counts = vec![0; rows * cols];
    for (&a, &b) in pa.iter().zip(pb) {
        counts[a * cols + b] += 1;
    }
    Ok(ContingencyTable { rows, cols, counts })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum FlagMode {
    /// Leave the largest fragment unflagged.
    #[default]
    Minority,
    All,
}

impl FlagMode {
    pub fn as_str(self) -> &'static str {
        match self {
            FlagMode::Minority => "minority",
            FlagMode::All => "all",
        }
    }
}

impl FromStr for FlagMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "minority" => Ok(FlagMode::Minority),
            "all" => Ok(FlagMode::All),
            _ => Err(Error::Config(format!(
                "flag_mode must be minority or all, got {s:?}"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChangeParams {
    pub tau_split: f64,
    pub tau_merge: f64,
    pub flag_mode: FlagMode,
    /// Single-pass 3×3 majority filter on the window mask.
    pub smooth: bool,
    /// Splits must also separate in the SAR partition.
    pub strict_split: bool,
}

impl Default for ChangeParams {
    fn default() -> Self {
        Self {
            tau_split: 0.2,
            tau_merge: 0.2,
            flag_mode: FlagMode::Minority,
            smooth: true,
            strict_split: false,
        }
    }
}

impl ChangeParams {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("tau_split", self.tau_split), ("tau_merge", self.tau_merge)] {
            if !(v > 0.0 && v <= 0.5) {
                return Err(Error::Param(format!("{name} must be in (0, 0.5], got {v}")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ChangeKind {
    Split,
    Merge,
}

impl ChangeKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ChangeKind::Split => "split",
            ChangeKind::Merge => "merge",
        }
    }
}

impl fmt::Display for ChangeKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ChangeEvent {
    pub kind: ChangeKind,
    /// Optical cluster for a split, SAR cluster for a merge.
    pub source: usize,
    /// Stacked clusters involved, ascending.
    pub counterparts: Vec<usize>,
    /// Flagged pixel indices within the window, ascending.
    pub pixels: Vec<usize>,
}

impl ChangeEvent {
    /// One report line, e.g. `window=3 kind=split source=1 counterparts=0,2 pixels=450`.
    pub fn report_line(&self, window: usize) -> String {
        let parts: Vec<String> = self.counterparts.iter().map(|c| c.to_string()).collect();
        format!(
            "window={window} kind={} source={} counterparts={} pixels={}",
            self.kind,
            self.source,
            parts.join(","),
            self.pixels.len()
        )
    }
}

/// Largest entry of `counts` restricted to `ids`; ties to the lowest id.
fn largest(ids: &[usize], count: impl Fn(usize) -> usize) -> usize {
    let mut best = ids[0];
    for &s in &ids[1..] {
        if count(s) > count(best) {
            best = s;
        }
    }
    best
}

fn most_common(labels: impl Iterator<Item = usize>) -> Option<usize> {
    let mut hist: Vec<usize> = Vec::new();
    for l in labels {
        if l >= hist.len() {
            hist.resize(l + 1, 0);
        }
        hist[l] += 1;
    }
    let mut best: Option<usize> = None;
    for (l, &c) in hist.iter().enumerate() {
        if c > 0 && best.is_none_or(|b| c > hist[b]) {
            best = Some(l);
        }
    }
    best
}

/// Optical clusters that spread over two or more stacked clusters, each
/// holding at least `tau_split` of the optical cluster.
///
/// With `strict_split`, `sar` must be given and the fragments' majority SAR
/// labels must not all coincide.
pub fn detect_splits(
    opt: &[usize],
    stacked: &[usize],
    sar: Option<&[usize]>,
    p: &ChangeParams,
) -> Result<Vec<ChangeEvent>> {
    let t = contingency(opt, stacked)?;
    if p.strict_split && sar.is_none_or(|s| s.len() != opt.len()) {
        return Err(Error::Param(
            "strict split needs a SAR partition of matching length".into(),
        ));
    }
    let mut events = Vec::new();
    for i in 0..t.rows() {
        let total = t.row_sum(i);
        if total == 0 {
            continue;
        }
        let frags: Vec<usize> = (0..t.cols())
            .filter(|&s| t.get(i, s) as f64 / total as f64 >= p.tau_split)
            .collect();
        if frags.len() < 2 {
            continue;
        }
        if p.strict_split {
            let sar = sar.expect("checked above");
            let mut majors: Vec<Option<usize>> = frags
                .iter()
                .map(|&s| {
                    most_common(
                        (0..opt.len())
                            .filter(|&j| opt[j] == i && stacked[j] == s)
                            .map(|j| sar[j]),
                    )
                })
                .collect();
            majors.sort();
            majors.dedup();
            if majors.len() < 2 {
                continue;
            }
        }
        let keep = match p.flag_mode {
            FlagMode::Minority => Some(largest(&frags, |s| t.get(i, s))),
            FlagMode::All => None,
        };
        let pixels = (0..opt.len())
            .filter(|&j| opt[j] == i && frags.contains(&stacked[j]) && Some(stacked[j]) != keep)
            .collect();
        events.push(ChangeEvent {
            kind: ChangeKind::Split,
            source: i,
            counterparts: frags,
            pixels,
        });
    }
    Ok(events)
}

/// SAR clusters receiving at least `1 − tau_merge` of each of two or more
/// stacked clusters.
pub fn detect_merges(stacked: &[usize], sar: &[usize], p: &ChangeParams) -> Result<Vec<ChangeEvent>> {
    let t = contingency(stacked, sar)?;
    let sums: Vec<usize> = (0..t.rows()).map(|s| t.row_sum(s)).collect();
    let mut events = Vec::new();
    for j in 0..t.cols() {
        let absorbed: Vec<usize> = (0..t.rows())
            .filter(|&s| sums[s] > 0 && t.get(s, j) as f64 / sums[s] as f64 >= 1.0 - p.tau_merge)
            .collect();
        if absorbed.len() < 2 {
            continue;
        }
        let keep = match p.flag_mode {
            FlagMode::Minority => Some(largest(&absorbed, |s| t.get(s, j))),
            FlagMode::All => None,
        };
        let pixels = (0..sar.len())
            .filter(|&q| sar[q] == j && absorbed.contains(&stacked[q]) && Some(stacked[q]) != keep)
            .collect();
        events.push(ChangeEvent {
            kind: ChangeKind::Merge,
            source: j,
            counterparts: absorbed,
            pixels,
        });
    }
    Ok(events)
}

/// Single pass of a 3×3 majority filter; ties keep the pixel's value.
pub fn majority_smooth(m: &Mask) -> Mask {
    let (w, h) = (m.width(), m.height());
    let mut out = m.clone();
    for y in 0..h {
        for x in 0..w {
            let (mut on, mut all) = (0usize, 0usize);
            for yy in y.saturating_sub(1)..=(y + 1).min(h - 1) {
                for xx in x.saturating_sub(1)..=(x + 1).min(w - 1) {
                    all += 1;
                    on += m.get(xx, yy) as usize;
                }
            }
            let off = all - on;
            if on != off {
                out.set(x, y, on > off);
            }
        }
    }
    out
}

/// Union of the events' pixel sets over a `width × height` window.
pub fn change_map(events: &[ChangeEvent], width: usize, height: usize, p: &ChangeParams) -> Result<Mask> {
    let mut m = Mask::filled(width, height, false)?;
    for e in events {
        for &q in &e.pixels {
            if q >= width * height {
                return Err(Error::Shape(format!("pixel {q} outside {width}x{height} window")));
            }
            m.set(q % width, q / width, true);
        }
    }
    Ok(if p.smooth && width > 0 && height > 0 {
        majority_smooth(&m)
    } else {
        m
    })
}

/// Hook for prior information (positional priors, class-of-interest
/// targeting and the like) applied to a window's events before the change
/// map is built.
pub trait EventHook: Send + Sync {
    fn apply(&self, window: usize, bounds: Bounds, events: &mut Vec<ChangeEvent>);
}

/// Leaves events untouched.
#[derive(Debug, Clone, Copy, Default)]
pub struct NoHook;

impl EventHook for NoHook {
    fn apply(&self, _: usize, _: Bounds, _: &mut Vec<ChangeEvent>) {}
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// Labels over `n` pixels where stacked cluster `s` gets `sizes[s]` pixels.
    fn blocks(sizes: &[usize]) -> Vec<usize> {
        sizes
            .iter()
            .enumerate()
            .flat_map(|(s, &n)| std::iter::repeat_n(s, n))
            .collect()
    }

    #[test]
    fn contingency_counts() {
        let a = [0, 0, 1, 1, 1];
        let b = [1, 1, 0, 0, 1];
        let t = contingency(&a, &b).unwrap();
        assert_eq!((t.get(0, 0), t.get(0, 1), t.get(1, 0), t.get(1, 1)), (0, 2, 2, 1));
        assert_eq!(t.total(), 5);
        assert_eq!(t.col_sum(1), 3);
        assert!(contingency(&a, &b[..4]).is_err());
    }

    #[test]
    fn single_column() {
        let a = [0, 2, 1, 2];
        let t = contingency(&a, &[0; 4]).unwrap();
        assert_eq!(t.cols(), 1);
        assert_eq!((0..3).map(|r| t.get(r, 0)).collect::<Vec<_>>(), vec![1, 1, 2]);
    }

    #[test]
    fn no_split_when_whole() {
        let opt = vec![0; 10];
        let e = detect_splits(&opt, &opt, None, &ChangeParams::default()).unwrap();
        assert!(e.is_empty());
    }

    #[test]
    fn even_split_flags_higher_id() {
        let opt = vec![0; 10];
        let st = blocks(&[5, 5]);
        let e = detect_splits(&opt, &st, None, &ChangeParams::default()).unwrap();
        assert_eq!(e.len(), 1);
        assert_eq!(e[0].counterparts, vec![0, 1]);
        assert_eq!(e[0].pixels, (5..10).collect::<Vec<_>>());
    }

    #[test]
    fn small_fragments_ignored() {
        let opt = vec![0; 100];
        let st = blocks(&[85, 10, 5]);
        assert!(detect_splits(&opt, &st, None, &ChangeParams::default())
            .unwrap()
            .is_empty());
    }

    #[test]
    fn all_mode_flags_every_fragment() {
        let opt = vec![0; 100];
        let st = blocks(&[60, 30, 10]);
        let p = ChangeParams {
            flag_mode: FlagMode::All,
            ..Default::default()
        };
        let e = detect_splits(&opt, &st, None, &p).unwrap();
        // the 10-pixel sliver is below tau and stays unflagged
        assert_eq!(e[0].pixels, (0..90).collect::<Vec<_>>());
    }

    #[test]
    fn strict_split_needs_sar_separation() {
        let opt = vec![0; 10];
        let st = blocks(&[5, 5]);
        let p = ChangeParams {
            strict_split: true,
            ..Default::default()
        };
        assert!(detect_splits(&opt, &st, Some(&[0; 10]), &p).unwrap().is_empty());
        assert_eq!(detect_splits(&opt, &st, Some(&st), &p).unwrap().len(), 1);
        assert!(detect_splits(&opt, &st, None, &p).is_err());
    }

    #[test]
    fn merges() {
        // distinct targets: nothing
        let st = blocks(&[4, 4]);
        assert!(detect_merges(&st, &st, &ChangeParams::default())
            .unwrap()
            .is_empty());
        // both stacked clusters fully inside SAR 0
        let e = detect_merges(&blocks(&[6, 4]), &[0; 10], &ChangeParams::default()).unwrap();
        assert_eq!(e.len(), 1);
        assert_eq!((e[0].kind, e[0].source), (ChangeKind::Merge, 0));
        assert_eq!(e[0].pixels, (6..10).collect::<Vec<_>>());
        // 0.75 of cluster 1 is not absorbed
        let st = blocks(&[4, 4]);
        let sar = [0, 0, 0, 0, 0, 0, 0, 1];
        let p = ChangeParams::default();
        assert!(detect_merges(&st, &sar, &p).unwrap().is_empty());
    }

    #[test]
    fn isolated_pixel_smoothed_away() {
        let ev = ChangeEvent {
            kind: ChangeKind::Split,
            source: 0,
            counterparts: vec![0, 1],
            pixels: vec![12],
        };
        let p = ChangeParams::default();
        assert_eq!(
            change_map(std::slice::from_ref(&ev), 5, 5, &p).unwrap().count(),
            0
        );
        let raw = ChangeParams { smooth: false, ..p };
        assert_eq!(change_map(&[ev], 5, 5, &raw).unwrap().count(), 1);
        assert_eq!(change_map(&[], 5, 5, &p).unwrap().count(), 0);
    }

    #[test]
    fn overlapping_events_union() {
        let mk = |pixels: Vec<usize>| ChangeEvent {
            kind: ChangeKind::Merge,
            source: 0,
            counterparts: vec![0, 1],
            pixels,
        };
        let p = ChangeParams {
            smooth: false,
            ..Default::default()
        };
        let m = change_map(&[mk(vec![0, 1, 2]), mk(vec![2, 3])], 4, 1, &p).unwrap();
        assert_eq!(m.count(), 4);
    }

    #[test]
    fn report_format() {
        let e = ChangeEvent {
            kind: ChangeKind::Split,
            source: 1,
            counterparts: vec![0, 2],
            pixels: (0..450).collect(),
        };
        assert_eq!(
            e.report_line(3),
            "window=3 kind=split source=1 counterparts=0,2 pixels=450"
        );
    }

    #[test]
    fn tau_range() {
        let p = ChangeParams {
            tau_split: 0.6,
            ..Default::default()
        };
        assert!(p.validate().is_err());
        assert!(ChangeParams::default().validate().is_ok());
    }

    fn labels(n: usize, k: usize) -> impl Strategy<Value = Vec<usize>> {
        proptest::collection::vec(0..k, n)
    }

    proptest! {
        #[test]
        fn contingency_matches_pair_count(a in labels(100, 5), b in labels(100, 4)) {
            let t = contingency(&a, &b).unwrap();
            prop_assert_eq!(t.total(), 100);
            for i in 0..t.rows() {
                for j in 0..t.cols() {
                    let n = a.iter().zip(&b).filter(|&(&x, &y)| x == i && y == j).count();
                    prop_assert_eq!(t.get(i, j), n);
                }
            }
        }

        #[test]
        fn split_relabel_invariant(opt in labels(60, 3), st in labels(60, 4), shift in 1usize..4) {
            let p = ChangeParams { flag_mode: FlagMode::All, ..Default::default() };
            let a = detect_splits(&opt, &st, None, &p).unwrap();
            let st2: Vec<usize> = st.iter().map(|&s| (s + shift) % 4).collect();
            let opt2: Vec<usize> = opt.iter().map(|&o| 2 - o).collect();
            let b = detect_splits(&opt2, &st2, None, &p).unwrap();
            let mut pa: Vec<Vec<usize>> = a.into_iter().map(|e| e.pixels).collect();
            let mut pb: Vec<Vec<usize>> = b.into_iter().map(|e| e.pixels).collect();
            pa.sort();
            pb.sort();
            prop_assert_eq!(pa, pb);
        }

        #[test]
        fn raising_tau_never_adds_splits(opt in labels(80, 3), st in labels(80, 5), t1 in 0.05f64..0.5, dt in 0.0f64..0.3) {
            let t2 = (t1 + dt).min(0.5);
            let at = |t| detect_splits(&opt, &st, None, &ChangeParams { tau_split: t, ..Default::default() }).unwrap().len();
            prop_assert!(at(t2) <= at(t1));
        }
    }
}
