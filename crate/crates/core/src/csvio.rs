//! Plain-text CSV for trajectories and chunks: a `tick,<channel names...>`
//! header, then one row per control tick.

use std::io::{Read, Write};
use std::path::Path;
use std::sync::Arc;

use crate::error::{dim_err, Error, Result};
use crate::numerics::Tensor2;
use crate::types::{ActionChunk, ActionProfile, Trajectory};

fn write_rows<W: Write>(writer: W, profile: &ActionProfile, data: &Tensor2, start_tick: u64) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let mut header = vec!["tick".to_string()];
    header.extend(profile.channel_names().iter().cloned());
    w.write_record(&header)?;
    for r in 0..data.rows() {
        let mut rec = vec![(start_tick + r as u64).to_string()];
        rec.extend(data.row(r).iter().map(|v| v.to_string()));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

/// Reads rows and checks the header against `profile`. Returns the first tick
/// and the sample matrix; ticks must be consecutive.
fn read_rows<R: Read>(reader: R, profile: &ActionProfile) -> Result<(u64, Tensor2)> {
    let mut rdr = csv::Reader::from_reader(reader);
    let header = rdr.headers()?.clone();
    let names: Vec<&str> = header.iter().collect();
    let expected: Vec<&str> = std::iter::once("tick").chain(profile.channel_names().iter().map(String::as_str)).collect();
    if names != expected {
        return dim_err(format!("csv header {names:?} does not match profile {expected:?}"));
    }
    let c = profile.channel_count();
    let mut values = Vec::new();
    let mut first_tick = None;
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let tick: u64 = rec[0]
            .trim()
            .parse()
            .map_err(|e| Error::InvalidArgument(format!("row {i}: bad tick {:?}: {e}", &rec[0])))?;
        let first = *first_tick.get_or_insert(tick);
        if tick != first + i as u64 {
            return Err(Error::InvalidArgument(format!("row {i}: tick {tick} is not consecutive")));
        }
        for j in 0..c {
            let v: f64 = rec[j + 1]
                .trim()
                .parse()
                .map_err(|e| Error::InvalidArgument(format!("row {i}, column {}: {e}", j + 1)))?;
            values.push(v);
        }
    }
    let rows = values.len() / c;
    Ok((first_tick.unwrap_or(0), Tensor2::from_vec(rows, c, values)?))
}

pub fn write_trajectory<W: Write>(writer: W, traj: &Trajectory) -> Result<()> {
    write_rows(writer, traj.profile(), traj.samples(), 0)
}

pub fn read_trajectory<R: Read>(reader: R, profile: Arc<ActionProfile>) -> Result<Trajectory> {
    let (_, samples) = read_rows(reader, &profile)?;
    Trajectory::new(samples, profile)
}

pub fn write_chunk<W: Write>(writer: W, chunk: &ActionChunk) -> Result<()> {
    write_rows(writer, chunk.profile(), chunk.data(), chunk.start_tick())
}

pub fn read_chunk<R: Read>(reader: R, profile: Arc<ActionProfile>) -> Result<ActionChunk> {
    let (start, data) = read_rows(reader, &profile)?;
    ActionChunk::new(data, profile, start)
}

pub fn save_trajectory(path: impl AsRef<Path>, traj: &Trajectory) -> Result<()> {
    let f = std::fs::File::create(path)?;
    write_trajectory(std::io::BufWriter::new(f), traj)
}

pub fn load_trajectory(path: impl AsRef<Path>, profile: Arc<ActionProfile>) -> Result<Trajectory> {
    let f = std::fs::File::open(path)?;
    read_trajectory(std::io::BufReader::new(f), profile)
}
