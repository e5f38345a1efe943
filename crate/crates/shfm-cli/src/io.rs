//! Loaders and writers for panels, geometry, and the binary draw store.
//!
//! Panels are one delimited text file per city; cities are ordered
//! lexicographically by filename everywhere. Loaders reject malformed input
//! instead of repairing it.

use std::fs;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};
use shfm::model::{IndicatorPanel, ParamState};
use shfm::sampler::ChainOutput;
use shfm::Geometry;

/// Numeric table parsed from one file, with an optional header row.
pub struct Table {
    pub rows: Vec<Vec<f64>>,
    pub header: Option<Vec<String>>,
}

/// Parses a comma- or whitespace-delimited numeric table. The delimiter is
/// auto-detected per file from the first non-empty line.
pub fn read_table(path: &Path, has_header: bool) -> Result<Table> {
    let raw = fs::read_to_string(path)
        .map_err(|e| CliError::Input(format!("cannot read {}: {e}", path.display())))?;
    let mut lines = raw
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty());
    let mut header = None;
    if has_header {
        if let Some((_, line)) = lines.next() {
            header = Some(split_line(line).map(str::to_string).collect());
        }
    }
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (lineno, line) in lines {
        let mut row = Vec::new();
        for (col, tok) in split_line(line).enumerate() {
            let v: f64 = tok.parse().map_err(|_| {
                CliError::Input(format!(
                    "{}:{}: column {} is not numeric: {tok:?}",
                    path.display(),
                    lineno + 1,
                    col + 1
                ))
            })?;
            row.push(v);
        }
        if let Some(prev) = rows.first() {
            if row.len() != prev.len() {
                return Err(CliError::Input(format!(
                    "{}:{}: ragged row ({} fields, expected {})",
                    path.display(),
                    lineno + 1,
                    row.len(),
                    prev.len()
                )));
            }
        }
        rows.push(row);
    }
    Ok(Table { rows, header })
}

fn split_line(line: &str) -> impl Iterator<Item = &str> {
    let delim = if line.contains(',') { Some(',') } else { None };
    line.split(move |c: char| match delim {
        Some(d) => c == d,
        None => c.is_whitespace(),
    })
    .map(str::trim)
    .filter(|t| !t.is_empty())
}

/// Files of a directory in lexicographic filename order, with their stems.
fn dir_files(dir: &Path) -> Result<Vec<(String, PathBuf)>> {
    let mut files = Vec::new();
    let entries = fs::read_dir(dir)
        .map_err(|e| CliError::Input(format!("cannot read directory {}: {e}", dir.display())))?;
    for entry in entries {
        let path = entry?.path();
        let name = path
            .file_name()
            .and_then(|n| n.to_str())
            .unwrap_or_default()
            .to_string();
        if path.is_file() && !name.starts_with('.') {
            let stem = path
                .file_stem()
                .and_then(|n| n.to_str())
                .unwrap_or_default()
                .to_string();
            files.push((stem, name, path));
        }
    }
    files.sort_by(|a, b| a.1.cmp(&b.1));
    if files.is_empty() {
        return Err(CliError::Input(format!(
            "directory {} contains no files",
            dir.display()
        )));
    }
    Ok(files.into_iter().map(|(stem, _, path)| (stem, path)).collect())
}

/// Loads one panel file per city; city names are the file stems, ordered
/// lexicographically by filename.
pub fn load_panel(dir: &Path, has_header: bool) -> Result<IndicatorPanel> {
    let files = dir_files(dir)?;
    let mut cities = Vec::new();
    let mut city_names = Vec::new();
    let mut indicator_names: Option<Vec<String>> = None;
    for (stem, path) in files {
        let table = read_table(&path, has_header)?;
        if table.rows.is_empty() {
            return Err(CliError::Input(format!("{} has no data rows", path.display())));
        }
        let p = table.rows[0].len();
        if let Some(h) = table.header {
            match &indicator_names {
                None => indicator_names = Some(h),
                Some(prev) if *prev != h => {
                    return Err(CliError::Input(format!(
                        "{}: header disagrees with earlier files",
                        path.display()
                    )))
                }
                _ => {}
            }
        }
        if let Some(first) = cities.first() {
            let first: &DMatrix<f64> = first;
            if first.ncols() != p {
                return Err(CliError::Input(format!(
                    "{}: {} columns, earlier files have {}",
                    path.display(),
                    p,
                    first.ncols()
                )));
            }
        }
        let flat: Vec<f64> = table.rows.iter().flatten().cloned().collect();
        cities.push(DMatrix::from_row_slice(table.rows.len(), p, &flat));
        city_names.push(stem);
    }
    let p = cities[0].ncols();
    let indicator_names =
        indicator_names.unwrap_or_else(|| (0..p).map(|k| format!("v{k}")).collect());
    Ok(IndicatorPanel::new(cities, indicator_names, city_names)?)
}

/// Writes one space-delimited file per city, named `<city>.txt`. Values use
/// the shortest round-trip decimal form, so `load_panel` reproduces the
/// numeric content exactly.
pub fn write_panel(dir: &Path, panel: &IndicatorPanel) -> Result<()> {
    fs::create_dir_all(dir)?;
    for (name, y) in panel.city_names.iter().zip(&panel.cities) {
        let mut out = String::new();
        for j in 0..y.nrows() {
            let row: Vec<String> = (0..y.ncols()).map(|k| y[(j, k)].to_string()).collect();
            out.push_str(&row.join(" "));
            out.push('\n');
        }
        fs::write(dir.join(format!("{name}.txt")), out)?;
    }
    Ok(())
}

/// Rows of `(id, x, y)` from a centroid file; duplicate ids are rejected.
pub fn load_labeled_points(path: &Path) -> Result<Vec<(String, [f64; 2])>> {
    let raw = fs::read_to_string(path)
        .map_err(|e| CliError::Input(format!("cannot read {}: {e}", path.display())))?;
    let mut out: Vec<(String, [f64; 2])> = Vec::new();
    for (lineno, line) in raw.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let toks: Vec<&str> = split_line(line).collect();
        if toks.len() != 3 {
            return Err(CliError::Input(format!(
                "{}:{}: expected `id x y`, got {} fields",
                path.display(),
                lineno + 1,
                toks.len()
            )));
        }
        let parse = |tok: &str, what: &str| -> Result<f64> {
            tok.parse().map_err(|_| {
                CliError::Input(format!(
                    "{}:{}: {what} is not numeric: {tok:?}",
                    path.display(),
                    lineno + 1
                ))
            })
        };
        let id = toks[0].to_string();
        if out.iter().any(|(existing, _)| *existing == id) {
            return Err(CliError::Input(format!(
                "{}:{}: duplicate id {id:?}",
                path.display(),
                lineno + 1
            )));
        }
        out.push((id, [parse(toks[1], "x")?, parse(toks[2], "y")?]));
    }
    if out.is_empty() {
        return Err(CliError::Input(format!("{} has no rows", path.display())));
    }
    Ok(out)
}

/// City centroids keyed by city name; every panel city must appear exactly
/// once, extras are rejected.
pub fn load_city_centroids(path: &Path, city_names: &[String]) -> Result<Vec<[f64; 2]>> {
    let points = load_labeled_points(path)?;
    if points.len() != city_names.len() {
        return Err(CliError::Input(format!(
            "{}: {} centroids for {} cities",
            path.display(),
            points.len(),
            city_names.len()
        )));
    }
    city_names
        .iter()
        .map(|name| {
            points
                .iter()
                .find(|(id, _)| id == name)
                .map(|(_, xy)| *xy)
                .ok_or_else(|| {
                    CliError::Input(format!("{}: no centroid for city {name:?}", path.display()))
                })
        })
        .collect()
}

/// Per-city tract centroid files (stems must match the city names); row
/// order defines tract order and must match the panel's row count.
pub fn load_tract_centroids(
    dir: &Path,
    city_names: &[String],
    tract_counts: &[usize],
) -> Result<Vec<Vec<[f64; 2]>>> {
    city_names
        .iter()
        .zip(tract_counts)
        .map(|(name, &n)| {
            let path = file_for_city(dir, name)?;
            let points = load_labeled_points(&path)?;
            if points.len() != n {
                return Err(CliError::Input(format!(
                    "{}: {} tract centroids, panel has {n} rows",
                    path.display(),
                    points.len()
                )));
            }
            Ok(points.into_iter().map(|(_, xy)| xy).collect())
        })
        .collect()
}

fn file_for_city(dir: &Path, name: &str) -> Result<PathBuf> {
    let matches: Vec<PathBuf> = dir_files(dir)?
        .into_iter()
        .filter(|(stem, _)| stem == name)
        .map(|(_, path)| path)
        .collect();
    match matches.len() {
        0 => Err(CliError::Input(format!(
            "no file for city {name:?} in {}",
            dir.display()
        ))),
        1 => Ok(matches.into_iter().next().unwrap()),
        _ => Err(CliError::Input(format!(
            "multiple files for city {name:?} in {}",
            dir.display()
        ))),
    }
}

/// Parses one adjacency file as either a 0/1 matrix or an edge list,
/// auto-detected against the known tract count. Matrices must be symmetric
/// with a zero diagonal; edge lists must be 0-based, in-range, and free of
/// duplicates (in either orientation).
pub fn load_adjacency_file(path: &Path, n_tracts: usize) -> Result<Vec<(usize, usize)>> {
    let table = read_table(path, false)?;
    if table.rows.is_empty() {
        return Ok(Vec::new());
    }
    let is_matrix = table.rows.len() == n_tracts
        && table.rows.iter().all(|r| r.len() == n_tracts)
        && table
            .rows
            .iter()
            .flatten()
            .all(|&v| v == 0.0 || v == 1.0);
    if is_matrix {
        let m = &table.rows;
        for j in 0..n_tracts {
            if m[j][j] != 0.0 {
                return Err(CliError::Input(format!(
                    "{}: nonzero diagonal at ({j}, {j})",
                    path.display()
                )));
            }
            for l in (j + 1)..n_tracts {
                if m[j][l] != m[l][j] {
                    return Err(CliError::Input(format!(
                        "{}: asymmetric at ({j}, {l})",
                        path.display()
                    )));
                }
            }
        }
        let mut edges = Vec::new();
        for j in 0..n_tracts {
            for l in (j + 1)..n_tracts {
                if m[j][l] == 1.0 {
                    edges.push((j, l));
                }
            }
        }
        return Ok(edges);
    }

    // Edge list.
    let mut edges: Vec<(usize, usize)> = Vec::new();
    for (row_idx, row) in table.rows.iter().enumerate() {
        if row.len() != 2 {
            return Err(CliError::Input(format!(
                "{}: row {} has {} fields; expected an edge `a b` or an {n_tracts}x{n_tracts} 0/1 matrix",
                path.display(),
                row_idx + 1,
                row.len()
            )));
        }
        let to_index = |v: f64| -> Result<usize> {
            if v.fract() != 0.0 || v < 0.0 || v >= n_tracts as f64 {
                return Err(CliError::Input(format!(
                    "{}: row {}: index {v} out of range for {n_tracts} tracts",
                    path.display(),
                    row_idx + 1
                )));
            }
            Ok(v as usize)
        };
        let a = to_index(row[0])?;
        let b = to_index(row[1])?;
        if a == b {
            return Err(CliError::Input(format!(
                "{}: row {}: self edge ({a}, {a})",
                path.display(),
                row_idx + 1
            )));
        }
        let e = (a.min(b), a.max(b));
        if edges.contains(&e) {
            return Err(CliError::Input(format!(
                "{}: row {}: duplicate edge ({}, {})",
                path.display(),
                row_idx + 1,
                e.0,
                e.1
            )));
        }
        edges.push(e);
    }
    edges.sort_unstable();
    Ok(edges)
}

/// Assembles a validated geometry from the centroid and adjacency files.
///
/// The adjacency directory may be `None` for variants without a within-city
/// field; the tract centroid directory may be `None` as well, in which case
/// placeholder coordinates on a line are synthesized (distances then carry
/// no meaning, which only matters for the CAR weights).
pub fn load_geometry(
    panel: &IndicatorPanel,
    city_centroids_file: &Path,
    tract_centroids_dir: Option<&Path>,
    adjacency_dir: Option<&Path>,
) -> Result<Geometry> {
    let counts = panel.tract_counts();
    let city_centroids = load_city_centroids(city_centroids_file, &panel.city_names)?;
    let tract_centroids = match tract_centroids_dir {
        Some(dir) => load_tract_centroids(dir, &panel.city_names, &counts)?,
        None => counts
            .iter()
            .map(|&n| (0..n).map(|j| [j as f64, 0.0]).collect())
            .collect(),
    };
    let adjacency = match adjacency_dir {
        Some(dir) => panel
            .city_names
            .iter()
            .zip(&counts)
            .map(|(name, &n)| load_adjacency_file(&file_for_city(dir, name)?, n))
            .collect::<Result<Vec<_>>>()?,
        None => counts.iter().map(|_| Vec::new()).collect(),
    };
    let geometry = Geometry {
        city_centroids,
        tract_centroids,
        adjacency,
    };
    geometry.validate()?;
    Ok(geometry)
}

/// Writes the geometry in the same layout the loaders read: a city centroid
/// file plus per-city tract centroid and edge-list adjacency files.
pub fn write_geometry(dir: &Path, geometry: &Geometry, city_names: &[String]) -> Result<()> {
    let tracts_dir = dir.join("tract_centroids");
    let adj_dir = dir.join("adjacency");
    fs::create_dir_all(&tracts_dir)?;
    fs::create_dir_all(&adj_dir)?;

    let mut cities = String::new();
    for (name, c) in city_names.iter().zip(&geometry.city_centroids) {
        cities.push_str(&format!("{name} {} {}\n", c[0], c[1]));
    }
    fs::write(dir.join("city_centroids.txt"), cities)?;

    for (i, name) in city_names.iter().enumerate() {
        let mut tracts = String::new();
        for (j, t) in geometry.tract_centroids[i].iter().enumerate() {
            tracts.push_str(&format!("{j} {} {}\n", t[0], t[1]));
        }
        fs::write(tracts_dir.join(format!("{name}.txt")), tracts)?;

        let mut edges = String::new();
        for &(a, b) in &geometry.adjacency[i] {
            edges.push_str(&format!("{a} {b}\n"));
        }
        fs::write(adj_dir.join(format!("{name}.txt")), edges)?;
    }
    Ok(())
}

/// Byte layout of the draw store, written next to the binary files.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DrawSchema {
    /// Always `f64-le`: consecutive little-endian doubles.
    pub format: String,
    /// Field names and lengths, in on-disk order within each draw.
    pub fields: Vec<(String, usize)>,
    pub n_indicators: usize,
    /// Tract counts of the effective (possibly aggregated) panel.
    pub tract_counts: Vec<usize>,
    pub n_chains: usize,
    pub n_draws_per_chain: usize,
    pub acceptance_rate_lambda1: Vec<Option<f64>>,
}

fn schema_for(chains: &[ChainOutput]) -> Result<DrawSchema> {
    let first = chains
        .first()
        .and_then(|c| c.draws.first())
        .ok_or_else(|| CliError::Input("no draws to store".into()))?;
    let p = first.mu.len();
    let counts: Vec<usize> = first.f.iter().map(|v| v.len()).collect();
    let total: usize = counts.iter().sum();
    let n_cities = counts.len();
    let fields = vec![
        ("mu".to_string(), p),
        ("beta".to_string(), p),
        ("sigma2".to_string(), p),
        ("f".to_string(), total),
        ("f_tilde".to_string(), total),
        ("theta".to_string(), n_cities),
        ("theta0".to_string(), 1),
        ("delta2".to_string(), 1),
        ("tau2".to_string(), n_cities),
        ("omega".to_string(), n_cities),
        ("lambda1".to_string(), 1),
    ];
    Ok(DrawSchema {
        format: "f64-le".into(),
        fields,
        n_indicators: p,
        tract_counts: counts,
        n_chains: chains.len(),
        n_draws_per_chain: chains[0].draws.len(),
        acceptance_rate_lambda1: chains.iter().map(|c| c.acceptance_rate_lambda1).collect(),
    })
}

fn state_to_bytes(state: &ParamState, out: &mut Vec<u8>) {
    let mut push = |v: f64| out.extend_from_slice(&v.to_le_bytes());
    for x in state.mu.iter() {
        push(*x);
    }
    for x in state.beta.iter() {
        push(*x);
    }
    for x in state.sigma2.iter() {
        push(*x);
    }
    for f in &state.f {
        for x in f.iter() {
            push(*x);
        }
    }
    for f in &state.f_tilde {
        for x in f.iter() {
            push(*x);
        }
    }
    for x in state.theta.iter() {
        push(*x);
    }
    push(state.theta0);
    push(state.delta2);
    for x in state.tau2.iter() {
        push(*x);
    }
    for x in state.omega.iter() {
        push(*x);
    }
    push(state.lambda1);
}

struct F64Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl F64Reader<'_> {
    fn next(&mut self) -> Result<f64> {
        let end = self.pos + 8;
        if end > self.bytes.len() {
            return Err(CliError::Input("draw store truncated".into()));
        }
        let v = f64::from_le_bytes(self.bytes[self.pos..end].try_into().unwrap());
        self.pos = end;
        Ok(v)
    }

    fn vector(&mut self, n: usize) -> Result<DVector<f64>> {
        let mut v = DVector::zeros(n);
        for x in v.iter_mut() {
            *x = self.next()?;
        }
        Ok(v)
    }
}

/// Writes the chains as `chain_<id>.bin` / `chain_<id>_logpost.bin` plus a
/// `draws_schema.json` sidecar in `dir`.
pub fn write_chains(dir: &Path, chains: &[ChainOutput]) -> Result<()> {
    fs::create_dir_all(dir)?;
    let schema = schema_for(chains)?;
    fs::write(
        dir.join("draws_schema.json"),
        serde_json::to_string_pretty(&schema)?,
    )?;
    for chain in chains {
        let mut bytes = Vec::new();
        for draw in &chain.draws {
            state_to_bytes(draw, &mut bytes);
        }
        let mut file = fs::File::create(dir.join(format!("chain_{}.bin", chain.chain_id)))?;
        file.write_all(&bytes)?;

        let mut trace = Vec::with_capacity(chain.logpost_trace.len() * 8);
        for &v in &chain.logpost_trace {
            trace.extend_from_slice(&v.to_le_bytes());
        }
        let mut file = fs::File::create(dir.join(format!("chain_{}_logpost.bin", chain.chain_id)))?;
        file.write_all(&trace)?;
    }
    Ok(())
}

/// Reads a draw store written by [`write_chains`].
pub fn read_chains(dir: &Path) -> Result<(Vec<ChainOutput>, DrawSchema)> {
    let schema: DrawSchema =
        serde_json::from_str(&fs::read_to_string(dir.join("draws_schema.json")).map_err(|e| {
            CliError::Input(format!("no draw store in {}: {e}", dir.display()))
        })?)?;
    let p = schema.n_indicators;
    let counts = &schema.tract_counts;
    let n_cities = counts.len();
    let mut chains = Vec::with_capacity(schema.n_chains);
    for chain_id in 0..schema.n_chains {
        let mut bytes = Vec::new();
        fs::File::open(dir.join(format!("chain_{chain_id}.bin")))?.read_to_end(&mut bytes)?;
        let mut reader = F64Reader { bytes: &bytes, pos: 0 };
        let mut draws = Vec::with_capacity(schema.n_draws_per_chain);
        for _ in 0..schema.n_draws_per_chain {
            let mut s = ParamState::zeros(p, counts);
            s.mu = reader.vector(p)?;
            s.beta = reader.vector(p)?;
            s.sigma2 = reader.vector(p)?;
            for i in 0..n_cities {
                s.f[i] = reader.vector(counts[i])?;
            }
            for i in 0..n_cities {
                s.f_tilde[i] = reader.vector(counts[i])?;
            }
            s.theta = reader.vector(n_cities)?;
            s.theta0 = reader.next()?;
            s.delta2 = reader.next()?;
            s.tau2 = reader.vector(n_cities)?;
            s.omega = reader.vector(n_cities)?;
            s.lambda1 = reader.next()?;
            draws.push(s);
        }
        if reader.pos != bytes.len() {
            return Err(CliError::Input(format!(
                "chain_{chain_id}.bin has {} trailing bytes",
                bytes.len() - reader.pos
            )));
        }

        let mut trace_bytes = Vec::new();
        fs::File::open(dir.join(format!("chain_{chain_id}_logpost.bin")))?
            .read_to_end(&mut trace_bytes)?;
        let mut trace_reader = F64Reader { bytes: &trace_bytes, pos: 0 };
        let mut logpost_trace = Vec::with_capacity(trace_bytes.len() / 8);
        while trace_reader.pos < trace_bytes.len() {
            logpost_trace.push(trace_reader.next()?);
        }
        chains.push(ChainOutput {
            draws,
            logpost_trace,
            acceptance_rate_lambda1: schema.acceptance_rate_lambda1[chain_id],
            chain_id,
        });
    }
    Ok((chains, schema))
}
