use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use chrono::{DateTime, NaiveDateTime};
use ndarray::{Array2, Array3};

use super::{check_timestamps, Dataset};
use crate::error::{Result, SgpError};
use crate::graph::{read_edge_list, SparseGraph};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum CsvFormat {
    /// Detect from the header: `timestamp,node,channel,value` is long, anything else wide.
    #[default]
    Auto,
    /// `timestamp,node_0,…,node_{N-1}` with one channel.
    Wide,
    /// `timestamp,node,channel,value`.
    Long,
}

impl std::str::FromStr for CsvFormat {
    type Err = SgpError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "auto" => Ok(CsvFormat::Auto),
            "wide" => Ok(CsvFormat::Wide),
            "long" => Ok(CsvFormat::Long),
            other => Err(SgpError::Config(format!("unknown data.format `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct LoadOptions {
    pub format: CsvFormat,
    /// Node count for long files; inferred from the largest id when absent.
    pub num_nodes: Option<usize>,
    /// Adds time-of-day covariates with this period, in sampling steps.
    pub period_steps: Option<usize>,
}

fn parse_timestamp(raw: &str, line: u64) -> Result<i64> {
    if let Ok(v) = raw.parse::<i64>() {
        return Ok(v);
    }
    if let Ok(dt) = DateTime::parse_from_rfc3339(raw) {
        return Ok(dt.timestamp());
    }
    for fmt in ["%Y-%m-%d %H:%M:%S", "%Y-%m-%dT%H:%M:%S", "%Y-%m-%d %H:%M"] {
        if let Ok(dt) = NaiveDateTime::parse_from_str(raw, fmt) {
            return Ok(dt.and_utc().timestamp());
        }
    }
    Err(SgpError::InvalidInput(format!("line {line}: unparseable timestamp `{raw}`")))
}

fn parse_cell(raw: &str, line: u64) -> Result<Option<f64>> {
    match raw {
        "" | "nan" | "NaN" | "NA" | "null" => Ok(None),
        _ => {
            let v: f64 = raw
                .parse()
                .map_err(|_| SgpError::InvalidInput(format!("line {line}: cannot parse value `{raw}`")))?;
            Ok(v.is_finite().then_some(v))
        }
    }
}

/// Raw grid before gap filling; `None` marks a missing reading.
struct Grid {
    timestamps: Vec<i64>,
    cells: Array3<Option<f64>>,
}

fn read_wide(mut rdr: csv::Reader<File>) -> Result<Grid> {
    let header = rdr.headers()?.clone();
    if header.len() < 2 {
        return Err(SgpError::InvalidInput("wide CSV needs a timestamp column and at least one node".into()));
    }
    let n = header.len() - 1;
    let mut timestamps = Vec::new();
    let mut rows: Vec<Option<f64>> = Vec::new();
    for record in rdr.records() {
        let record = record?;
        let line = record.position().map_or(0, |p| p.line());
        if record.len() != n + 1 {
            return Err(SgpError::InvalidInput(format!(
                "line {line}: ragged row with {} fields, expected {}",
                record.len(),
                n + 1
            )));
        }
        timestamps.push(parse_timestamp(&record[0], line)?);
        for cell in record.iter().skip(1) {
            rows.push(parse_cell(cell, line)?);
        }
    }
    let t = timestamps.len();
    let cells = Array3::from_shape_vec((t, n, 1), rows).map_err(|e| SgpError::Shape(e.to_string()))?;
    Ok(Grid { timestamps, cells })
}

fn read_long(mut rdr: csv::Reader<File>, num_nodes: Option<usize>) -> Result<Grid> {
    let mut timestamps: Vec<i64> = Vec::new();
    let mut entries: BTreeMap<(usize, usize, usize), Option<f64>> = BTreeMap::new();
    let mut max_node = 0usize;
    let mut max_channel = 0usize;
    for record in rdr.records() {
        let record = record?;
        let line = record.position().map_or(0, |p| p.line());
        if record.len() != 4 {
            return Err(SgpError::InvalidInput(format!(
                "line {line}: ragged row with {} fields, expected 4",
                record.len()
            )));
        }
        let ts = parse_timestamp(&record[0], line)?;
        match timestamps.last() {
            Some(&last) if ts < last => {
                return Err(SgpError::InvalidInput(format!("line {line}: timestamps go backwards")));
            }
            Some(&last) if ts == last => {}
            _ => timestamps.push(ts),
        }
        let node: usize = record[1]
            .parse()
            .map_err(|_| SgpError::Index(format!("line {line}: unknown node id `{}`", &record[1])))?;
        if num_nodes.is_some_and(|n| node >= n) {
            return Err(SgpError::Index(format!("line {line}: unknown node id {node}")));
        }
        let channel: usize = record[2]
            .parse()
            .map_err(|_| SgpError::InvalidInput(format!("line {line}: bad channel `{}`", &record[2])))?;
        max_node = max_node.max(node);
        max_channel = max_channel.max(channel);
        entries.insert((timestamps.len() - 1, node, channel), parse_cell(&record[3], line)?);
    }
    let n = num_nodes.unwrap_or(if entries.is_empty() { 0 } else { max_node + 1 });
    let dx = if entries.is_empty() { 1 } else { max_channel + 1 };
    let mut cells = Array3::from_elem((timestamps.len(), n, dx), None);
    for ((t, i, c), v) in entries {
        cells[[t, i, c]] = v;
    }
    Ok(Grid { timestamps, cells })
}

/// Forward-fills gaps per node and channel; leading gaps take the channel mean.
fn fill(grid: Grid) -> (Vec<i64>, Array3<f64>, Array3<bool>) {
    let (t, n, dx) = grid.cells.dim();
    let mask = grid.cells.mapv(|c| c.is_some());
    let mut values = Array3::zeros((t, n, dx));
    for c in 0..dx {
        let observed: Vec<f64> = grid
            .cells
            .index_axis(ndarray::Axis(2), c)
            .iter()
            .filter_map(|v| *v)
            .collect();
        let mean = if observed.is_empty() {
            0.0
        } else {
            observed.iter().sum::<f64>() / observed.len() as f64
        };
        for i in 0..n {
            let mut last: Option<f64> = None;
            for s in 0..t {
                let v = match grid.cells[[s, i, c]] {
                    Some(v) => {
                        last = Some(v);
                        v
                    }
                    None => last.unwrap_or(mean),
                };
                values[[s, i, c]] = v;
            }
        }
    }
    (grid.timestamps, values, mask)
}

/// Loads a dataset from a wide or long CSV and an optional edge list.
pub fn load_csv(values_path: &Path, edges_path: Option<&Path>, options: &LoadOptions) -> Result<Dataset> {
    let file = File::open(values_path)
        .map_err(|e| SgpError::MissingArtifact(format!("{}: {e}", values_path.display())))?;
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(file);
    let header: Vec<String> = rdr.headers()?.iter().map(str::to_ascii_lowercase).collect();
    let format = match options.format {
        CsvFormat::Auto if header == ["timestamp", "node", "channel", "value"] => CsvFormat::Long,
        CsvFormat::Auto => CsvFormat::Wide,
        f => f,
    };
    let grid = match format {
        CsvFormat::Long => read_long(rdr, options.num_nodes)?,
        _ => read_wide(rdr)?,
    };
    check_timestamps(&grid.timestamps)?;
    let (timestamps, values, mask) = fill(grid);
    let (t, n, _) = values.dim();
    if options.num_nodes.is_some_and(|expected| expected != n) {
        return Err(SgpError::Shape(format!(
            "values file has {n} nodes, expected {}",
            options.num_nodes.unwrap_or_default()
        )));
    }
    let graph = match edges_path {
        Some(p) => read_edge_list(p, Some(n))?,
        None => SparseGraph::empty(n),
    };
    let mut ds = Dataset {
        values,
        mask,
        exog: Array3::zeros((t, n, 0)),
        static_attrs: Array2::zeros((n, 0)),
        timestamps,
        graph,
    };
    if let Some(period_steps) = options.period_steps {
        ds.add_time_of_day(period_steps as i64 * ds.step())?;
    }
    ds.validate()?;
    Ok(ds)
}

fn fmt_cell(v: f64, observed: bool) -> String {
    if observed {
        format!("{v}")
    } else {
        String::new()
    }
}

/// Writes channel 0 as a wide CSV; filled cells are written empty.
pub fn write_wide_csv(path: &Path, dataset: &Dataset) -> Result<()> {
    if dataset.num_channels() != 1 {
        return Err(SgpError::Shape("wide CSV holds exactly one channel; use the long format".into()));
    }
    let mut out = BufWriter::new(File::create(path)?);
    write!(out, "timestamp")?;
    for i in 0..dataset.num_nodes() {
        write!(out, ",node_{i}")?;
    }
    writeln!(out)?;
    for (t, ts) in dataset.timestamps.iter().enumerate() {
        write!(out, "{ts}")?;
        for i in 0..dataset.num_nodes() {
            write!(out, ",{}", fmt_cell(dataset.values[[t, i, 0]], dataset.mask[[t, i, 0]]))?;
        }
        writeln!(out)?;
    }
    out.flush()?;
    Ok(())
}

pub fn write_long_csv(path: &Path, dataset: &Dataset) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    writeln!(out, "timestamp,node,channel,value")?;
    for (t, ts) in dataset.timestamps.iter().enumerate() {
        for i in 0..dataset.num_nodes() {
            for c in 0..dataset.num_channels() {
                let cell = fmt_cell(dataset.values[[t, i, c]], dataset.mask[[t, i, c]]);
                writeln!(out, "{ts},{i},{c},{cell}")?;
            }
        }
    }
    out.flush()?;
    Ok(())
}
