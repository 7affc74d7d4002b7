//! File formats for stations, ZTD observations, wind observations, and the
//! binary round-trip layout for processed panels and cubes.
//!
//! Delimited text:
//!
//! * stations: `station_id,lat,lon`
//! * ZTD: `timestamp,station_id,ztd_m`, ISO-8601 UTC timestamps, missing rows allowed
//! * wind: a metadata line `# level_kind=height_m` (or `pressure_hPa`) followed by
//!   `timestamp,station_id,level,wind_speed_ms,wind_dir_deg,w_ms`, optionally
//!   followed by `u_ms,v_ms` (written by this crate; preferred over the
//!   speed/direction pair when present)
//!
//! Floats in data files are written with the shortest representation that parses
//! back to the same bits.
//!
//! Binary layout (all integers and floats little-endian):
//!
//! ```text
//! magic     [u8; 4]   b"GWZP" for a ZTD panel, b"GWWC" for a wind cube
//! version   u32       1
//! stations  u32 n, then n x (u32 id_len, id bytes (UTF-8), f64 lat, f64 lon)
//! axis      i64 start, i64 step, u64 count
//! levels    (cube only) u8 kind (0 = height_m, 1 = pressure_hPa), u32 n, n x f64
//! dims      u32 rank, rank x u64
//! values    f64 x prod(dims), row-major
//! mask      u8 x prod(dims), row-major, 1 = observed
//! ```

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs;
use std::io::Read;
use std::path::Path;

use chrono::{DateTime, SecondsFormat, Utc};
use ndarray::{Array2, Array4, ArrayD, IxDyn};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::preprocess::{compose_wind, decompose_wind};
use crate::types::{LevelKind, LevelSpec, Station, StationTable, TimeAxis, WindCube, ZtdPanel, DEFAULT_STEP_SECONDS};

const PANEL_MAGIC: &[u8; 4] = b"GWZP";
const CUBE_MAGIC: &[u8; 4] = b"GWWC";
const BINARY_VERSION: u32 = 1;

pub fn format_timestamp(t: i64) -> String {
    DateTime::<Utc>::from_timestamp(t, 0)
        .map(|d| d.to_rfc3339_opts(SecondsFormat::Secs, true))
        .unwrap_or_else(|| t.to_string())
}

pub fn parse_timestamp(s: &str) -> Result<i64> {
    DateTime::parse_from_rfc3339(s.trim())
        .map(|d| d.timestamp())
        .map_err(|e| Error::Parse(format!("timestamp {s:?}: {e}")))
}

/// Formats with 9 significant digits, for diffable output tables.
pub fn fmt_sig9(x: f64) -> String {
    if x == 0.0 {
        return "0".to_string();
    }
    if !x.is_finite() {
        return x.to_string();
    }
    let magnitude = x.abs().log10().floor() as i32;
    let decimals = 8 - magnitude;
    if (0..=17).contains(&decimals) {
        format!("{:.*}", decimals as usize, x)
    } else {
        format!("{:.8e}", x)
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(sha256_hex(&bytes))
}

pub(crate) fn write_string(path: &Path, contents: &str) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, contents).map_err(|e| Error::io(path, e))
}

pub(crate) fn write_bytes(path: &Path, contents: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, contents).map_err(|e| Error::io(path, e))
}

fn read_string(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn parse_f64(field: &str, what: &str) -> Result<f64> {
    field
        .trim()
        .parse::<f64>()
        .map_err(|e| Error::Parse(format!("{what} {field:?}: {e}")))
}

fn check_header(reader: &mut csv::Reader<&[u8]>, expected: &[&str]) -> Result<()> {
    let header = reader.headers()?;
    let got: Vec<&str> = header.iter().map(str::trim).collect();
    if got != expected {
        return Err(Error::Parse(format!("expected header {expected:?}, found {got:?}")));
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// stations

pub fn stations_to_csv(table: &StationTable) -> String {
    let mut out = String::from("station_id,lat,lon\n");
    for s in table.entries() {
        out.push_str(&format!("{},{},{}\n", s.id, s.lat, s.lon));
    }
    out
}

pub fn stations_from_csv(text: &str) -> Result<StationTable> {
    let mut reader = csv::ReaderBuilder::new().from_reader(text.as_bytes());
    check_header(&mut reader, &["station_id", "lat", "lon"])?;
    let mut entries = Vec::new();
    for record in reader.records() {
        let record = record?;
        entries.push(Station {
            id: record[0].trim().to_string(),
            lat: parse_f64(&record[1], "lat")?,
            lon: parse_f64(&record[2], "lon")?,
        });
    }
    StationTable::new(entries)
}

pub fn write_stations(path: &Path, table: &StationTable) -> Result<()> {
    write_string(path, &stations_to_csv(table))
}

pub fn read_stations(path: &Path) -> Result<StationTable> {
    stations_from_csv(&read_string(path)?)
}

/// Infers a uniform axis from a set of observed timestamps.
fn infer_axis(times: &BTreeSet<i64>, default_step: i64) -> Result<TimeAxis> {
    let first = *times.iter().next().ok_or_else(|| Error::Data("no rows".into()))?;
    let last = *times.iter().next_back().unwrap();
    let step = times
        .iter()
        .zip(times.iter().skip(1))
        .map(|(a, b)| b - a)
        .min()
        .unwrap_or(default_step);
    if let Some(t) = times.iter().find(|&&t| (t - first) % step != 0) {
        return Err(Error::Data(format!(
            "timestamp {} is off the {}s grid starting at {}",
            format_timestamp(*t),
            step,
            format_timestamp(first)
        )));
    }
    TimeAxis::new(first, step, ((last - first) / step) as usize + 1)
}

// ---------------------------------------------------------------------------
// ZTD

/// Observed entries only; masked entries produce no row.
pub fn ztd_to_csv(panel: &ZtdPanel) -> String {
    let mut out = String::from("timestamp,station_id,ztd_m\n");
    let axis = panel.axis();
    for t in 0..axis.count {
        let ts = format_timestamp(axis.timestamp(t));
        for (s, station) in panel.stations().entries().iter().enumerate() {
            if panel.mask()[[t, s]] {
                out.push_str(&format!("{},{},{}\n", ts, station.id, panel.values()[[t, s]]));
            }
        }
    }
    out
}

/// Parses ZTD rows against a station table. The time axis spans the first to
/// the last timestamp present, at the smallest observed spacing.
pub fn ztd_from_csv(text: &str, stations: &StationTable) -> Result<ZtdPanel> {
    let mut reader = csv::ReaderBuilder::new().from_reader(text.as_bytes());
    check_header(&mut reader, &["timestamp", "station_id", "ztd_m"])?;
    let index: HashMap<&str, usize> = stations
        .entries()
        .iter()
        .enumerate()
        .map(|(i, s)| (s.id.as_str(), i))
        .collect();
    let mut rows = Vec::new();
    let mut times = BTreeSet::new();
    for record in reader.records() {
        let record = record?;
        let t = parse_timestamp(&record[0])?;
        let id = record[1].trim();
        let s = *index
            .get(id)
            .ok_or_else(|| Error::Data(format!("unknown station {id}")))?;
        rows.push((t, s, parse_f64(&record[2], "ztd_m")?));
        times.insert(t);
    }
    let axis = infer_axis(&times, DEFAULT_STEP_SECONDS)?;
    let mut values = Array2::from_elem((axis.count, stations.len()), f64::NAN);
    let mut mask = Array2::from_elem((axis.count, stations.len()), false);
    for (t, s, v) in rows {
        let k = axis.index_of(t).expect("timestamp on inferred grid");
        if mask[[k, s]] {
            return Err(Error::Data(format!("duplicate ZTD row at {} for {}", format_timestamp(t), stations.get(s).id)));
        }
        values[[k, s]] = v;
        mask[[k, s]] = true;
    }
    ZtdPanel::new(axis, stations.clone(), values, mask)
}

pub fn write_ztd(path: &Path, panel: &ZtdPanel) -> Result<()> {
    write_string(path, &ztd_to_csv(panel))
}

pub fn read_ztd(path: &Path, stations: &StationTable) -> Result<ZtdPanel> {
    ztd_from_csv(&read_string(path)?, stations)
}

// ---------------------------------------------------------------------------
// wind

/// Writes observed (u, v, w) as speed, direction and vertical speed, followed
/// by the exact `u_ms,v_ms` columns so a read-back is bit-exact.
/// A row is emitted when all three components are observed.
pub fn wind_to_csv(cube: &WindCube) -> String {
    let mut out = format!(
        "# level_kind={}\ntimestamp,station_id,level,wind_speed_ms,wind_dir_deg,w_ms,u_ms,v_ms\n",
        cube.levels().kind.label()
    );
    let axis = cube.axis();
    let (nt, nl, ns, _) = cube.values().dim();
    for t in 0..nt {
        let ts = format_timestamp(axis.timestamp(t));
        for s in 0..ns {
            for l in 0..nl {
                let m = cube.mask();
                if !(m[[t, l, s, 0]] && m[[t, l, s, 1]] && m[[t, l, s, 2]]) {
                    continue;
                }
                let v = cube.values();
                let (speed, dir) = compose_wind(v[[t, l, s, 0]], v[[t, l, s, 1]]);
                out.push_str(&format!(
                    "{},{},{},{},{},{},{},{}\n",
                    ts,
                    cube.stations().get(s).id,
                    cube.levels().values[l],
                    speed,
                    dir,
                    v[[t, l, s, 2]],
                    v[[t, l, s, 0]],
                    v[[t, l, s, 1]]
                ));
            }
        }
    }
    out
}

fn parse_level_kind(line: &str) -> Result<LevelKind> {
    let rest = line
        .trim_start_matches('#')
        .trim()
        .strip_prefix("level_kind=")
        .ok_or_else(|| Error::Parse(format!("expected `# level_kind=...`, found {line:?}")))?;
    match rest.trim() {
        "height_m" => Ok(LevelKind::HeightM),
        "pressure_hPa" => Ok(LevelKind::PressureHpa),
        other => Err(Error::Parse(format!("unknown level kind {other:?}"))),
    }
}

const WIND_COLUMNS: [&str; 6] = ["timestamp", "station_id", "level", "wind_speed_ms", "wind_dir_deg", "w_ms"];

/// Parses wind rows, decomposing speed/direction into (u, v). When the
/// optional trailing `u_ms,v_ms` columns are present they are used instead.
pub fn wind_from_csv(text: &str, stations: &StationTable) -> Result<WindCube> {
    let (first, rest) = text.split_once('\n').unwrap_or((text, ""));
    let kind = parse_level_kind(first)?;
    let mut reader = csv::ReaderBuilder::new().from_reader(rest.as_bytes());
    let exact_uv = {
        let header = reader.headers()?;
        let got: Vec<&str> = header.iter().map(str::trim).collect();
        if got == WIND_COLUMNS {
            false
        } else if got.len() == 8 && got[..6] == WIND_COLUMNS && got[6..] == ["u_ms", "v_ms"] {
            true
        } else {
            return Err(Error::Parse(format!("expected header {WIND_COLUMNS:?} (+ u_ms,v_ms), found {got:?}")));
        }
    };
    let index: HashMap<&str, usize> = stations
        .entries()
        .iter()
        .enumerate()
        .map(|(i, s)| (s.id.as_str(), i))
        .collect();
    let mut rows = Vec::new();
    let mut times = BTreeSet::new();
    let mut level_bits = BTreeMap::new();
    for record in reader.records() {
        let record = record?;
        let t = parse_timestamp(&record[0])?;
        let id = record[1].trim();
        let s = *index
            .get(id)
            .ok_or_else(|| Error::Data(format!("unknown station {id}")))?;
        let level = parse_f64(&record[2], "level")?;
        let speed = parse_f64(&record[3], "wind_speed_ms")?;
        let dir = parse_f64(&record[4], "wind_dir_deg")?;
        let w = parse_f64(&record[5], "w_ms")?;
        let (u, v) = if exact_uv {
            (parse_f64(&record[6], "u_ms")?, parse_f64(&record[7], "v_ms")?)
        } else {
            decompose_wind(speed, dir)?
        };
        level_bits.insert(level.to_bits(), level);
        times.insert(t);
        rows.push((t, s, level, [u, v, w]));
    }
    let mut levels: Vec<f64> = level_bits.into_values().collect();
    levels.sort_by(|a, b| a.total_cmp(b));
    if kind == LevelKind::PressureHpa {
        levels.reverse();
    }
    let levels = LevelSpec::new(kind, levels)?;
    let axis = infer_axis(&times, DEFAULT_STEP_SECONDS)?;
    let shape = (axis.count, levels.len(), stations.len(), 3);
    let mut values = Array4::from_elem(shape, f64::NAN);
    let mut mask = Array4::from_elem(shape, false);
    for (t, s, level, uvw) in rows {
        let k = axis.index_of(t).expect("timestamp on inferred grid");
        let l = levels.values.iter().position(|&x| x == level).expect("level collected");
        for c in 0..3 {
            values[[k, l, s, c]] = uvw[c];
            mask[[k, l, s, c]] = true;
        }
    }
    WindCube::new(axis, levels, stations.clone(), values, mask)
}

pub fn write_wind(path: &Path, cube: &WindCube) -> Result<()> {
    write_string(path, &wind_to_csv(cube))
}

pub fn read_wind(path: &Path, stations: &StationTable) -> Result<WindCube> {
    wind_from_csv(&read_string(path)?, stations)
}

// ---------------------------------------------------------------------------
// binary

struct Writer(Vec<u8>);

impl Writer {
    fn u8(&mut self, x: u8) {
        self.0.push(x);
    }
    fn u32(&mut self, x: u32) {
        self.0.extend_from_slice(&x.to_le_bytes());
    }
    fn u64(&mut self, x: u64) {
        self.0.extend_from_slice(&x.to_le_bytes());
    }
    fn i64(&mut self, x: i64) {
        self.0.extend_from_slice(&x.to_le_bytes());
    }
    fn f64(&mut self, x: f64) {
        self.0.extend_from_slice(&x.to_le_bytes());
    }

    fn header(&mut self, magic: &[u8; 4], stations: &StationTable, axis: &TimeAxis) {
        self.0.extend_from_slice(magic);
        self.u32(BINARY_VERSION);
        self.u32(stations.len() as u32);
        for s in stations.entries() {
            self.u32(s.id.len() as u32);
            self.0.extend_from_slice(s.id.as_bytes());
            self.f64(s.lat);
            self.f64(s.lon);
        }
        self.i64(axis.start);
        self.i64(axis.step);
        self.u64(axis.count as u64);
    }

    fn payload<'a>(&mut self, dims: &[usize], values: impl Iterator<Item = &'a f64>, mask: impl Iterator<Item = &'a bool>) {
        self.u32(dims.len() as u32);
        for &d in dims {
            self.u64(d as u64);
        }
        for &v in values {
            self.f64(v);
        }
        for &m in mask {
            self.u8(m as u8);
        }
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(Error::Parse("truncated binary file".into()));
        }
        let out = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }
    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }
    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn i64(&mut self) -> Result<i64> {
        Ok(i64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn header(&mut self, magic: &[u8; 4]) -> Result<(StationTable, TimeAxis)> {
        if self.take(4)? != magic {
            return Err(Error::Parse("bad magic bytes".into()));
        }
        let version = self.u32()?;
        if version != BINARY_VERSION {
            return Err(Error::Parse(format!("unsupported binary version {version}")));
        }
        let n = self.u32()? as usize;
        let mut entries = Vec::with_capacity(n);
        for _ in 0..n {
            let len = self.u32()? as usize;
            let id = std::str::from_utf8(self.take(len)?)
                .map_err(|e| Error::Parse(e.to_string()))?
                .to_string();
            entries.push(Station { id, lat: self.f64()?, lon: self.f64()? });
        }
        let stations = StationTable::new(entries)?;
        let start = self.i64()?;
        let step = self.i64()?;
        let count = self.u64()? as usize;
        Ok((stations, TimeAxis::new(start, step, count)?))
    }

    fn payload(&mut self) -> Result<(ArrayD<f64>, ArrayD<bool>)> {
        let rank = self.u32()? as usize;
        let dims: Vec<usize> = (0..rank).map(|_| self.u64().map(|d| d as usize)).collect::<Result<_>>()?;
        let n: usize = dims.iter().product();
        let values: Vec<f64> = (0..n).map(|_| self.f64()).collect::<Result<_>>()?;
        let mask: Vec<bool> = (0..n).map(|_| self.u8().map(|b| b != 0)).collect::<Result<_>>()?;
        if self.pos != self.buf.len() {
            return Err(Error::Parse("trailing bytes after payload".into()));
        }
        let shape = IxDyn(&dims);
        Ok((
            ArrayD::from_shape_vec(shape.clone(), values).map_err(|e| Error::Parse(e.to_string()))?,
            ArrayD::from_shape_vec(shape, mask).map_err(|e| Error::Parse(e.to_string()))?,
        ))
    }
}

pub fn panel_to_bytes(panel: &ZtdPanel) -> Vec<u8> {
    let mut w = Writer(Vec::new());
    w.header(PANEL_MAGIC, panel.stations(), panel.axis());
    let (a, b) = panel.values().dim();
    w.payload(&[a, b], panel.values().iter(), panel.mask().iter());
    w.0
}

pub fn panel_from_bytes(bytes: &[u8]) -> Result<ZtdPanel> {
    let mut r = Reader { buf: bytes, pos: 0 };
    let (stations, axis) = r.header(PANEL_MAGIC)?;
    let (values, mask) = r.payload()?;
    let values = values
        .into_dimensionality()
        .map_err(|e| Error::Parse(format!("panel payload rank: {e}")))?;
    let mask = mask
        .into_dimensionality()
        .map_err(|e| Error::Parse(format!("panel mask rank: {e}")))?;
    ZtdPanel::new(axis, stations, values, mask)
}

pub fn cube_to_bytes(cube: &WindCube) -> Vec<u8> {
    let mut w = Writer(Vec::new());
    w.header(CUBE_MAGIC, cube.stations(), cube.axis());
    w.u8(match cube.levels().kind {
        LevelKind::HeightM => 0,
        LevelKind::PressureHpa => 1,
    });
    w.u32(cube.levels().len() as u32);
    for &l in &cube.levels().values {
        w.f64(l);
    }
    let (a, b, c, d) = cube.values().dim();
    w.payload(&[a, b, c, d], cube.values().iter(), cube.mask().iter());
    w.0
}

pub fn cube_from_bytes(bytes: &[u8]) -> Result<WindCube> {
    let mut r = Reader { buf: bytes, pos: 0 };
    let (stations, axis) = r.header(CUBE_MAGIC)?;
    let kind = match r.u8()? {
        0 => LevelKind::HeightM,
        1 => LevelKind::PressureHpa,
        k => return Err(Error::Parse(format!("unknown level kind tag {k}"))),
    };
    let n = r.u32()? as usize;
    let levels: Vec<f64> = (0..n).map(|_| r.f64()).collect::<Result<_>>()?;
    let levels = LevelSpec::new(kind, levels)?;
    let (values, mask) = r.payload()?;
    let values = values
        .into_dimensionality()
        .map_err(|e| Error::Parse(format!("cube payload rank: {e}")))?;
    let mask = mask
        .into_dimensionality()
        .map_err(|e| Error::Parse(format!("cube mask rank: {e}")))?;
    WindCube::new(axis, levels, stations, values, mask)
}

fn read_all(path: &Path) -> Result<Vec<u8>> {
    let mut f = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut buf = Vec::new();
    f.read_to_end(&mut buf).map_err(|e| Error::io(path, e))?;
    Ok(buf)
}

pub fn write_panel_bin(path: &Path, panel: &ZtdPanel) -> Result<()> {
    write_bytes(path, &panel_to_bytes(panel))
}

pub fn read_panel_bin(path: &Path) -> Result<ZtdPanel> {
    panel_from_bytes(&read_all(path)?)
}

pub fn write_cube_bin(path: &Path, cube: &WindCube) -> Result<()> {
    write_bytes(path, &cube_to_bytes(cube))
}

pub fn read_cube_bin(path: &Path) -> Result<WindCube> {
    cube_from_bytes(&read_all(path)?)
}

/// Pretty JSON with a trailing newline.
pub fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    write_string(path, &text)
}

pub fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = read_string(path)?;
    Ok(serde_json::from_str(&text)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn table() -> StationTable {
        StationTable::new(vec![
            Station { id: "A1".into(), lat: 29.3619, lon: 120.0717 },
            Station { id: "B2".into(), lat: -12.5, lon: -179.25 },
        ])
        .unwrap()
    }

    #[test]
    fn timestamps_round_trip() {
        let t = 1_748_000_100;
        assert_eq!(parse_timestamp(&format_timestamp(t)).unwrap(), t);
        assert_eq!(format_timestamp(0), "1970-01-01T00:00:00Z");
    }

    #[test]
    fn sig9_formatting() {
        assert_eq!(fmt_sig9(1.0), "1.00000000");
        assert_eq!(fmt_sig9(0.5773502691896258), "0.577350269");
        assert_eq!(fmt_sig9(123.456), "123.456000");
        assert_eq!(fmt_sig9(0.0), "0");
        assert_eq!(fmt_sig9(-2.5e-12), "-2.50000000e-12");
    }

    #[test]
    fn ztd_csv_skips_masked_rows() {
        let axis = TimeAxis::new(1_748_000_100, 300, 3).unwrap();
        let mut values = Array2::from_elem((3, 2), 2.41);
        let mut mask = Array2::from_elem((3, 2), true);
        values[[1, 0]] = f64::NAN;
        mask[[1, 0]] = false;
        let panel = ZtdPanel::new(axis, table(), values, mask).unwrap();
        let text = ztd_to_csv(&panel);
        assert_eq!(text.lines().count(), 1 + 5);
        let back = ztd_from_csv(&text, &table()).unwrap();
        assert_eq!(back.mask(), panel.mask());
        assert_eq!(back.axis(), panel.axis());
    }

    #[test]
    fn wind_csv_requires_level_metadata() {
        let text = "timestamp,station_id,level,wind_speed_ms,wind_dir_deg,w_ms\n";
        assert!(wind_from_csv(text, &table()).is_err());
    }

    #[test]
    fn wind_csv_decomposes_direction() {
        let text = "# level_kind=height_m\ntimestamp,station_id,level,wind_speed_ms,wind_dir_deg,w_ms\n\
                    2025-05-22T00:00:00Z,A1,110,10,0,0.25\n\
                    2025-05-22T00:06:00Z,A1,110,5,90,-0.5\n";
        let cube = wind_from_csv(text, &table()).unwrap();
        assert_eq!(cube.axis().step, 360);
        let v = cube.values();
        assert!((v[[0, 0, 0, 0]]).abs() < 1e-12);
        assert!((v[[0, 0, 0, 1]] + 10.0).abs() < 1e-12);
        assert!((v[[1, 0, 0, 0]] + 5.0).abs() < 1e-12);
        assert_eq!(v[[1, 0, 0, 2]], -0.5);
        assert!(!cube.mask()[[0, 0, 1, 0]]);
    }

    #[test]
    fn binary_rejects_bad_magic_and_truncation() {
        let axis = TimeAxis::new(0, 300, 1).unwrap();
        let panel = ZtdPanel::fully_observed(axis, table(), Array2::from_elem((1, 2), 1.0)).unwrap();
        let mut bytes = panel_to_bytes(&panel);
        assert!(cube_from_bytes(&bytes).is_err());
        bytes.pop();
        assert!(panel_from_bytes(&bytes).is_err());
    }

    fn arb_panel() -> impl Strategy<Value = ZtdPanel> {
        (1usize..6, 1usize..4).prop_flat_map(|(nt, ns)| {
            (
                proptest::collection::vec(any::<f64>(), nt * ns),
                proptest::collection::vec(any::<bool>(), nt * ns),
                -1_000_000_000i64..2_000_000_000,
                1i64..7200,
            )
                .prop_map(move |(vals, mask, start, step)| {
                    let stations = StationTable::new(
                        (0..ns)
                            .map(|i| Station { id: format!("st{i}"), lat: i as f64 * 1.5 - 3.0, lon: 100.0 + i as f64 })
                            .collect(),
                    )
                    .unwrap();
                    let axis = TimeAxis::new(start, step, nt).unwrap();
                    ZtdPanel::new(
                        axis,
                        stations,
                        Array2::from_shape_vec((nt, ns), vals).unwrap(),
                        Array2::from_shape_vec((nt, ns), mask).unwrap(),
                    )
                    .unwrap()
                })
        })
    }

    fn bits_equal(a: &ZtdPanel, b: &ZtdPanel) -> bool {
        a.axis() == b.axis()
            && a.stations() == b.stations()
            && a.mask() == b.mask()
            && a.values().iter().zip(b.values().iter()).all(|(x, y)| x.to_bits() == y.to_bits())
    }

    proptest! {
        #[test]
        fn panel_binary_round_trip_is_bit_exact(panel in arb_panel()) {
            let back = panel_from_bytes(&panel_to_bytes(&panel)).unwrap();
            prop_assert!(bits_equal(&panel, &back));
        }

        #[test]
        fn ztd_csv_round_trip_is_bit_exact(vals in proptest::collection::vec(-1e6f64..1e6, 6)) {
            let axis = TimeAxis::new(1_700_000_000, 300, 3).unwrap();
            let panel = ZtdPanel::fully_observed(axis, table(), Array2::from_shape_vec((3, 2), vals).unwrap()).unwrap();
            let back = ztd_from_csv(&ztd_to_csv(&panel), &table()).unwrap();
            prop_assert!(bits_equal(&panel, &back));
        }

        #[test]
        fn wind_csv_round_trip_is_bit_exact(vals in proptest::collection::vec(-80.0f64..80.0, 24)) {
            let axis = TimeAxis::new(1_700_000_000, 360, 2).unwrap();
            let levels = LevelSpec::new(LevelKind::PressureHpa, vec![850.0, 500.0]).unwrap();
            let values = Array4::from_shape_vec((2, 2, 2, 3), vals).unwrap();
            let cube = WindCube::fully_observed(axis, levels, table(), values).unwrap();
            let back = wind_from_csv(&wind_to_csv(&cube), &table()).unwrap();
            prop_assert_eq!(back.axis(), cube.axis());
            prop_assert_eq!(back.levels(), cube.levels());
            prop_assert_eq!(back.mask(), cube.mask());
            prop_assert!(back.values().iter().zip(cube.values().iter()).all(|(x, y)| x.to_bits() == y.to_bits()));
        }

        #[test]
        fn station_csv_round_trip(lat in -90.0f64..=90.0, lon in -180.0f64..=180.0) {
            let t = StationTable::new(vec![Station { id: "X".into(), lat, lon }]).unwrap();
            prop_assert_eq!(stations_from_csv(&stations_to_csv(&t)).unwrap(), t);
        }
    }
}
