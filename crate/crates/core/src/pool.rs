//! Model-pool analysis: rank correlations, row filters, grouped summaries
//! and plot-ready report files.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::error::{Error, Result};
use crate::io::pool_table::{Cell, PoolTable};

/// Pair counts behind Kendall's τ-b.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PairCounts {
    pub n: u64,
    pub pairs: u64,
    pub concordant: u64,
    pub discordant: u64,
    /// Pairs tied in x (including those also tied in y).
    pub ties_x: u64,
    pub ties_y: u64,
    pub ties_xy: u64,
}

impl PairCounts {
    pub fn tau_b(&self) -> Result<f64> {
        let (vx, vy) = (self.pairs - self.ties_x, self.pairs - self.ties_y);
        if vx == 0 || vy == 0 {
            return Err(Error::Degenerate("τ-b is undefined when one side is entirely tied".into()));
        }
        let num = self.concordant as f64 - self.discordant as f64;
        Ok(num / ((vx as f64) * (vy as f64)).sqrt())
    }
}

fn tie_pairs<T: PartialEq>(sorted: &[T]) -> u64 {
    let mut total = 0u64;
    let mut i = 0;
    while i < sorted.len() {
        let mut j = i + 1;
        while j < sorted.len() && sorted[j] == sorted[i] {
            j += 1;
        }
        let t = (j - i) as u64;
        total += t * (t - 1) / 2;
        i = j;
    }
    total
}

/// Sorts `v` and returns the number of strict inversions.
fn merge_count(v: &mut Vec<f64>) -> u64 {
    let n = v.len();
    let mut buf = vec![0.0; n];
    let mut swaps = 0u64;
    let mut width = 1;
    while width < n {
        let mut lo = 0;
        while lo < n {
            let mid = (lo + width).min(n);
            let hi = (lo + 2 * width).min(n);
            let (mut i, mut j, mut k) = (lo, mid, lo);
            while i < mid && j < hi {
                if v[j] < v[i] {
                    swaps += (mid - i) as u64;
                    buf[k] = v[j];
                    j += 1;
                } else {
                    buf[k] = v[i];
                    i += 1;
                }
                k += 1;
            }
            buf[k..k + (mid - i)].copy_from_slice(&v[i..mid]);
            k += mid - i;
            buf[k..k + (hi - j)].copy_from_slice(&v[j..hi]);
            lo = hi;
        }
        std::mem::swap(v, &mut buf);
        width *= 2;
    }
    swaps
}

/// Concordant/discordant/tied pair counts in O(n log n).
pub fn pair_counts(x: &[f64], y: &[f64]) -> Result<PairCounts> {
    if x.len() != y.len() {
        return Err(Error::Shape(format!("x has {} values, y has {}", x.len(), y.len())));
    }
    if x.len() < 2 {
        return Err(Error::InvalidArgument("rank correlation needs at least two values".into()));
    }
    if let Some(i) = x.iter().chain(y).position(|v| v.is_nan()) {
        return Err(Error::NonFinite(i % x.len()));
    }
    let n = x.len() as u64;
    let pairs = n * (n - 1) / 2;
    let mut joint: Vec<(f64, f64)> = x.iter().copied().zip(y.iter().copied()).collect();
    joint.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));
    let xs: Vec<f64> = joint.iter().map(|p| p.0).collect();
    let ties_x = tie_pairs(&xs);
    let ties_xy = tie_pairs(&joint);
    let mut ys: Vec<f64> = joint.iter().map(|p| p.1).collect();
    let discordant = merge_count(&mut ys);
    let ties_y = tie_pairs(&ys);
    let concordant = pairs + ties_xy - ties_x - ties_y - discordant;
    Ok(PairCounts { n, pairs, concordant, discordant, ties_x, ties_y, ties_xy })
}

/// Kendall's τ-b: `(C − D)/√((n₀ − n₁)(n₀ − n₂))`.
pub fn kendall_tau_b(x: &[f64], y: &[f64]) -> Result<f64> {
    pair_counts(x, y)?.tau_b()
}

/// `column = value`; numeric columns compare as numbers.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Predicate {
    pub column: String,
    pub value: String,
}

impl Predicate {
    fn matches(&self, table: &PoolTable, row: usize) -> Result<bool> {
        Ok(match table.cell(row, &self.column)? {
            Cell::Text(t) => t == self.value,
            Cell::Num(v) => {
                let want: f64 = self.value.trim().parse().map_err(|_| {
                    Error::InvalidArgument(format!(
                        "filter value `{}` for numeric column `{}` is not a number",
                        self.value, self.column
                    ))
                })?;
                v == want
            }
        })
    }
}

/// Parses `k=v,k=v`; an empty string yields no predicates.
pub fn parse_predicates(s: &str) -> Result<Vec<Predicate>> {
    s.split(',')
        .filter(|part| !part.trim().is_empty())
        .map(|part| {
            let (k, v) = part
                .split_once('=')
                .ok_or_else(|| Error::InvalidArgument(format!("filter `{part}` is not of the form column=value")))?;
            Ok(Predicate { column: k.trim().replace('-', "_"), value: v.trim().to_string() })
        })
        .collect()
}

/// Rows satisfying every predicate, in their original order.
pub fn filter_rows(table: &PoolTable, predicates: &[Predicate]) -> Result<PoolTable> {
    for p in predicates {
        table.require_column(&p.column)?;
    }
    let mut keep = Vec::new();
    for i in 0..table.len() {
        let mut ok = true;
        for p in predicates {
            if !p.matches(table, i)? {
                ok = false;
                break;
            }
        }
        if ok {
            keep.push(i);
        }
    }
    Ok(table.select(&keep))
}

fn cell_value(cell: Cell<'_>) -> Value {
    match cell {
        Cell::Num(v) => serde_json::Number::from_f64(v).map(Value::Number).unwrap_or(Value::Null),
        Cell::Text(t) => Value::String(t.to_string()),
    }
}

fn cell_text(cell: Cell<'_>) -> String {
    match cell {
        Cell::Num(v) => v.to_string(),
        Cell::Text(t) => t.to_string(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricSummary {
    pub column: String,
    pub mean: f64,
    pub min: f64,
    pub max: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupSummary {
    /// Group-by column → shared value.
    pub key: Map<String, Value>,
    pub count: usize,
    pub metrics: Vec<MetricSummary>,
}

/// Per-group count, mean, min and max; groups in first-appearance order.
pub fn group_summary(table: &PoolTable, group_by: &[String], metrics: &[String]) -> Result<Vec<GroupSummary>> {
    for c in group_by.iter().chain(metrics) {
        table.require_column(c)?;
    }
    let values: Vec<Vec<f64>> = metrics.iter().map(|m| table.numeric_column(m)).collect::<Result<_>>()?;

    let mut keys: Vec<Vec<String>> = Vec::new();
    let mut members: Vec<Vec<usize>> = Vec::new();
    for i in 0..table.len() {
        let key = group_by.iter().map(|c| table.cell(i, c).map(cell_text)).collect::<Result<Vec<_>>>()?;
        match keys.iter().position(|k| *k == key) {
            Some(g) => members[g].push(i),
            None => {
                keys.push(key);
                members.push(vec![i]);
            }
        }
    }

    members
        .iter()
        .map(|rows| {
            let first = rows[0];
            let mut key = Map::new();
            for c in group_by {
                key.insert(c.clone(), cell_value(table.cell(first, c)?));
            }
            let metrics = metrics
                .iter()
                .zip(&values)
                .map(|(name, col)| {
                    let vals: Vec<f64> = rows.iter().map(|&r| col[r]).collect();
                    MetricSummary {
                        column: name.clone(),
                        mean: vals.iter().sum::<f64>() / vals.len() as f64,
                        min: vals.iter().copied().fold(f64::INFINITY, f64::min),
                        max: vals.iter().copied().fold(f64::NEG_INFINITY, f64::max),
                    }
                })
                .collect();
            Ok(GroupSummary { key, count: rows.len(), metrics })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorrelationSpec {
    pub x: String,
    pub y: String,
}

impl CorrelationSpec {
    /// Parses `x:y`.
    pub fn parse(s: &str) -> Result<Self> {
        match s.split(':').collect::<Vec<_>>()[..] {
            [x, y] if !x.is_empty() && !y.is_empty() => {
                Ok(CorrelationSpec { x: x.replace('-', "_"), y: y.replace('-', "_") })
            }
            _ => Err(Error::InvalidArgument(format!("correlation `{s}` is not of the form x:y"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationResult {
    pub x: String,
    pub y: String,
    pub statistic: String,
    pub n: usize,
    pub tau_b: f64,
    pub counts: PairCounts,
}

pub fn correlate(table: &PoolTable, spec: &CorrelationSpec) -> Result<CorrelationResult> {
    let x = table.numeric_column(&spec.x)?;
    let y = table.numeric_column(&spec.y)?;
    let counts = pair_counts(&x, &y)?;
    Ok(CorrelationResult {
        x: spec.x.clone(),
        y: spec.y.clone(),
        statistic: "kendall_tau_b".into(),
        n: x.len(),
        tau_b: counts.tau_b()?,
        counts,
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScatterSpec {
    pub x: String,
    pub y: String,
    /// Series column.
    pub key: String,
}

impl ScatterSpec {
    /// Parses `x:y:key`.
    pub fn parse(s: &str) -> Result<Self> {
        match s.split(':').collect::<Vec<_>>()[..] {
            [x, y, key] if !x.is_empty() && !y.is_empty() && !key.is_empty() => Ok(ScatterSpec {
                x: x.replace('-', "_"),
                y: y.replace('-', "_"),
                key: key.replace('-', "_"),
            }),
            _ => Err(Error::InvalidArgument(format!("scatter `{s}` is not of the form x:y:key"))),
        }
    }

    pub fn file_name(&self) -> String {
        format!("scatter_{}_vs_{}_by_{}.csv", self.y, self.x, self.key)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct GroupSpec {
    pub group_by: Vec<String>,
    pub metrics: Vec<String>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ReportSpec {
    pub filters: Vec<Predicate>,
    pub correlations: Vec<CorrelationSpec>,
    pub groups: Option<GroupSpec>,
    pub scatters: Vec<ScatterSpec>,
}

/// Scatter CSV bytes: header `key,x,y`, one line per row.
pub fn scatter_csv(table: &PoolTable, spec: &ScatterSpec) -> Result<Vec<u8>> {
    for c in [&spec.x, &spec.y, &spec.key] {
        table.require_column(c)?;
    }
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record([&spec.key, &spec.x, &spec.y])?;
    for i in 0..table.len() {
        w.write_record([
            cell_text(table.cell(i, &spec.key)?),
            cell_text(table.cell(i, &spec.x)?),
            cell_text(table.cell(i, &spec.y)?),
        ])?;
    }
    w.into_inner().map_err(|e| Error::Stream(e.into_error()))
}

fn json_bytes(value: &impl Serialize, what: &str) -> Result<Vec<u8>> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| Error::json(what, e))?;
    text.push('\n');
    Ok(text.into_bytes())
}

fn put(dir: &Path, name: &str, bytes: &[u8], written: &mut Vec<PathBuf>) -> Result<()> {
    let path = dir.join(name);
    fs::write(&path, bytes).map_err(|e| Error::io(&path, e))?;
    written.push(path);
    Ok(())
}

/// Writes the requested report files into `dir`, returning their paths.
/// `correlations.json` is written when correlations are requested,
/// `groups.json` for a group spec and one CSV per scatter spec.
pub fn emit_report(table: &PoolTable, spec: &ReportSpec, dir: impl AsRef<Path>) -> Result<Vec<PathBuf>> {
    let dir = dir.as_ref();
    let filtered = filter_rows(table, &spec.filters)?;

    // compute everything before touching the destination
    let correlations = spec.correlations.iter().map(|c| correlate(&filtered, c)).collect::<Result<Vec<_>>>()?;
    let groups = spec
        .groups
        .as_ref()
        .map(|g| group_summary(&filtered, &g.group_by, &g.metrics))
        .transpose()?;
    let scatters = spec
        .scatters
        .iter()
        .map(|s| Ok((s.file_name(), scatter_csv(&filtered, s)?)))
        .collect::<Result<Vec<_>>>()?;

    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut written = Vec::new();
    if !spec.correlations.is_empty() {
        let doc = serde_json::json!({
            "filters": spec.filters,
            "rows": filtered.len(),
            "correlations": correlations,
        });
        put(dir, "correlations.json", &json_bytes(&doc, "correlations")?, &mut written)?;
    }
    if let (Some(g), Some(groups)) = (&spec.groups, groups) {
        let doc = serde_json::json!({
            "filters": spec.filters,
            "group_by": g.group_by,
            "metrics": g.metrics,
            "groups": groups,
        });
        put(dir, "groups.json", &json_bytes(&doc, "groups")?, &mut written)?;
    }
    for (name, bytes) in scatters {
        put(dir, &name, &bytes, &mut written)?;
    }
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::io::pool_table::parse_pool_table;
    use proptest::prelude::*;

    fn brute_counts(x: &[f64], y: &[f64]) -> (i64, i64, i64, i64) {
        let (mut c, mut d, mut tx, mut ty) = (0, 0, 0, 0);
        for i in 0..x.len() {
            for j in i + 1..x.len() {
                let s = (x[i] - x[j]).signum() * (y[i] - y[j]).signum();
                if x[i] == x[j] {
                    tx += 1;
                }
                if y[i] == y[j] {
                    ty += 1;
                }
                if x[i] != x[j] && y[i] != y[j] {
                    if s > 0.0 {
                        c += 1;
                    } else {
                        d += 1;
                    }
                }
            }
        }
        (c, d, tx, ty)
    }

    #[test]
    fn tau_examples() {
        assert_eq!(kendall_tau_b(&[1.0, 2.0, 3.0], &[2.0, 4.0, 6.0]).unwrap(), 1.0);
        assert_eq!(kendall_tau_b(&[1.0, 2.0, 3.0], &[3.0, 2.0, 1.0]).unwrap(), -1.0);
        assert!(matches!(kendall_tau_b(&[1.0, 1.0], &[1.0, 2.0]), Err(Error::Degenerate(_))));
        assert!(kendall_tau_b(&[1.0], &[1.0]).is_err());
        assert!(kendall_tau_b(&[1.0, 2.0], &[1.0]).is_err());
    }

    #[test]
    fn predicate_parsing() {
        let p = parse_predicates("wd=0.1, adapt-lr=0.01").unwrap();
        assert_eq!(p[1], Predicate { column: "adapt_lr".into(), value: "0.01".into() });
        assert!(parse_predicates("").unwrap().is_empty());
        assert!(parse_predicates("wd").is_err());
    }

    const SMALL: &str = "wd,aug,do,adapt_lr,pre_acc,ft_acc,m_fpr\n\
                         0.1,none,0,0.01,50,80,10\n\
                         0.03,none,0,0.01,40,70,30\n\
                         0.1,light1,0,0.03,45,75,20\n";

    #[test]
    fn filtering_and_grouping() {
        let t = parse_pool_table(SMALL.as_bytes()).unwrap();
        let f = filter_rows(&t, &parse_predicates("wd=0.1").unwrap()).unwrap();
        assert_eq!(f.len(), 2);
        assert_eq!(filter_rows(&t, &[]).unwrap(), t);
        assert!(filter_rows(&t, &parse_predicates("nope=1").unwrap()).is_err());
        assert_eq!(filter_rows(&t, &parse_predicates("aug=light1").unwrap()).unwrap().len(), 1);

        let g = group_summary(&t, &["aug".into()], &["m_fpr".into()]).unwrap();
        assert_eq!(g.len(), 2);
        assert_eq!(g[0].key["aug"], "none");
        assert_eq!((g[0].count, g[0].metrics[0].mean), (2, 20.0));
        assert_eq!(g[1].metrics[0].mean, 20.0);
        let whole = group_summary(&t, &["do".into()], &["m_fpr".into()]).unwrap();
        assert_eq!(whole.len(), 1);
        assert!(group_summary(&t, &["zzz".into()], &[]).is_err());
    }

    #[test]
    fn empty_scatter_is_header_only() {
        let t = parse_pool_table("wd,aug,do,adapt_lr,pre_acc,ft_acc,m_fpr\n".as_bytes()).unwrap();
        let csv = scatter_csv(&t, &ScatterSpec::parse("ft_acc:m_fpr:wd").unwrap()).unwrap();
        assert_eq!(String::from_utf8(csv).unwrap(), "wd,ft_acc,m_fpr\n");
    }

    #[test]
    fn report_is_deterministic() {
        let t = parse_pool_table(SMALL.as_bytes()).unwrap();
        let spec = ReportSpec {
            filters: vec![],
            correlations: vec![CorrelationSpec::parse("pre_acc:m_fpr").unwrap()],
            groups: Some(GroupSpec { group_by: vec!["wd".into()], metrics: vec!["m_fpr".into()] }),
            scatters: vec![ScatterSpec::parse("ft_acc:m_fpr:aug").unwrap()],
        };
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        let fa = emit_report(&t, &spec, a.path()).unwrap();
        let fb = emit_report(&t, &spec, b.path()).unwrap();
        assert_eq!(fa.len(), 3);
        for (x, y) in fa.iter().zip(&fb) {
            assert_eq!(fs::read(x).unwrap(), fs::read(y).unwrap());
        }
    }

    fn tied(n: usize) -> impl Strategy<Value = Vec<f64>> {
        prop::collection::vec((0i32..6).prop_map(f64::from), n)
    }

    proptest! {
        #![proptest_config(ProptestConfig { cases: 128, rng_seed: proptest::test_runner::RngSeed::Fixed(3), failure_persistence: None, ..ProptestConfig::default() })]
        #[test]
        fn counts_match_brute_force((x, y) in (2usize..40).prop_flat_map(|n| (tied(n), tied(n)))) {
            let fast = pair_counts(&x, &y).unwrap();
            let (c, d, tx, ty) = brute_counts(&x, &y);
            prop_assert_eq!(fast.concordant as i64, c);
            prop_assert_eq!(fast.discordant as i64, d);
            prop_assert_eq!(fast.ties_x as i64, tx);
            prop_assert_eq!(fast.ties_y as i64, ty);
        }

        #[test]
        fn reversal_and_monotone_transform((x, y) in (3usize..30).prop_flat_map(|n| (tied(n), tied(n)))) {
            if let Ok(t) = kendall_tau_b(&x, &y) {
                let neg: Vec<f64> = y.iter().map(|v| -v).collect();
                prop_assert_eq!(kendall_tau_b(&x, &neg).unwrap(), -t);
                let warped: Vec<f64> = x.iter().map(|v| v.exp() * 3.0 + 1.0).collect();
                prop_assert_eq!(kendall_tau_b(&warped, &y).unwrap(), t);
            }
        }
    }
}
