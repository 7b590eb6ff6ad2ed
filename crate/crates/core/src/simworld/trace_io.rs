//! Columnar text export of a [`WorldTrace`].
//!
//! One row per IMU tick: `t`, the 5×5 state row-major, the IMU reading that
//! starts at this tick, then per anchor the range and finally the link mask.
//! Readings are blank on the last row; ranges and mask are blank except on
//! UWB ticks. A leading `#` line carries the seed, trajectory and sensor count.

use std::io::{BufRead, BufReader, Read, Write};

use nalgebra::{DMatrix, Vector3};

use super::{ImuReading, TopologySample, TrajectoryId, WorldTrace, IMU_DT, UWB_DIVISOR};
use crate::dise::Adjacency;
use crate::error::{Error, Result};
use crate::liegroup::{GroupElement, GroupKind};

const FORMAT: &str = "diukf-trace v1";

pub fn write_trace<W: Write>(trace: &WorldTrace, out: W) -> Result<()> {
    let n = trace.sensors();
    let mut out = out;
    writeln!(out, "# {FORMAT} seed={} trajectory={} sensors={n}", trace.seed, trace.trajectory)?;
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["t".to_string()];
    header.extend((0..25).map(|k| format!("x{}{}", k / 5, k % 5)));
    header.extend(["gx", "gy", "gz", "ax", "ay", "az"].map(String::from));
    header.extend((1..=n).map(|k| format!("range{k}")));
    header.push("links".into());
    w.write_record(&header)?;

    for (k, state) in trace.states.iter().enumerate() {
        let mut row = vec![format!("{}", k as f64 * IMU_DT)];
        let m = state.matrix();
        for r in 0..5 {
            for c in 0..5 {
                row.push(format!("{}", m[(r, c)]));
            }
        }
        match trace.imu.get(k) {
            Some(u) => row.extend(u.gyro.iter().chain(u.accel.iter()).map(|v| format!("{v}"))),
            None => row.extend(std::iter::repeat_n(String::new(), 6)),
        }
        if k % UWB_DIVISOR == 0 {
            let tick = k / UWB_DIVISOR;
            row.extend(trace.measurements[tick].iter().map(|z| z.map(|v| format!("{v}")).unwrap_or_default()));
            row.push(trace.topology[tick].adjacency.to_bits().to_string());
        } else {
            row.extend(std::iter::repeat_n(String::new(), n + 1));
        }
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

fn header_field<'a>(line: &'a str, key: &str) -> Result<&'a str> {
    line.split_whitespace()
        .find_map(|tok| tok.strip_prefix(key).and_then(|v| v.strip_prefix('=')))
        .ok_or_else(|| Error::Parse(format!("trace header lacks '{key}'")))
}

fn number(s: &str) -> Result<f64> {
    s.parse().map_err(|_| Error::Parse(format!("bad number '{s}'")))
}

pub fn read_trace<R: Read>(input: R) -> Result<WorldTrace> {
    let mut reader = BufReader::new(input);
    let mut first = String::new();
    reader.read_line(&mut first)?;
    if !first.starts_with('#') || !first.contains(FORMAT) {
        return Err(Error::Parse("missing trace header line".into()));
    }
    let seed: u64 = header_field(&first, "seed")?.parse().map_err(|_| Error::Parse("bad seed".into()))?;
    let trajectory: TrajectoryId = header_field(&first, "trajectory")?.parse()?;
    let n: usize = header_field(&first, "sensors")?.parse().map_err(|_| Error::Parse("bad sensor count".into()))?;

    let mut rdr = csv::Reader::from_reader(reader);
    let mut trace = WorldTrace { seed, trajectory, states: Vec::new(), imu: Vec::new(), measurements: Vec::new(), topology: Vec::new() };
    for (k, rec) in rdr.records().enumerate() {
        let rec = rec?;
        if rec.len() != 1 + 25 + 6 + n + 1 {
            return Err(Error::Parse(format!("row {k} has {} fields", rec.len())));
        }
        let vals: Vec<f64> = (1..26).map(|i| number(&rec[i])).collect::<Result<_>>()?;
        let m = DMatrix::from_row_slice(5, 5, &vals);
        trace.states.push(GroupElement::from_matrix(GroupKind::SE23, &m)?);
        if !rec[26].is_empty() {
            let u: Vec<f64> = (26..32).map(|i| number(&rec[i])).collect::<Result<_>>()?;
            trace.imu.push(ImuReading { t: k as f64 * IMU_DT, gyro: Vector3::new(u[0], u[1], u[2]), accel: Vector3::new(u[3], u[4], u[5]) });
        }
        let links = &rec[32 + n];
        if !links.is_empty() {
            let row: Vec<Option<f64>> = (32..32 + n).map(|i| if rec[i].is_empty() { Ok(None) } else { number(&rec[i]).map(Some) }).collect::<Result<_>>()?;
            trace.measurements.push(row);
            let bits: u64 = links.parse().map_err(|_| Error::Parse(format!("bad link mask '{links}'")))?;
            let timestep = trace.topology.len() as u64;
            trace.topology.push(TopologySample { timestep, adjacency: Adjacency::from_bits(n, bits)? });
        }
    }
    Ok(trace)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::simworld::NoiseConfig;

    #[test]
    fn roundtrip() {
        let trace = WorldTrace::generate(TrajectoryId::Two, 2.0, 4, &NoiseConfig::default(), 60.0).unwrap();
        let mut buf = Vec::new();
        write_trace(&trace, &mut buf).unwrap();
        let back = read_trace(buf.as_slice()).unwrap();
        assert_eq!(back.seed, 4);
        assert_eq!(back.trajectory, TrajectoryId::Two);
        assert_eq!(back.imu, trace.imu);
        assert_eq!(back.measurements, trace.measurements);
        assert_eq!(back.topology, trace.topology);
        assert_eq!(back.states.len(), trace.states.len());
        for (a, b) in back.states.iter().zip(&trace.states) {
            assert!((a.matrix() - b.matrix()).amax() == 0.0);
        }
    }

    #[test]
    fn rejects_missing_header() {
        assert!(read_trace("t,x00\n0,1\n".as_bytes()).is_err());
    }
}
