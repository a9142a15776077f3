//! CSV emission of result rows.

use std::io::Write;

use replica_core::replica_solver::to_bits;

use crate::config::Units;
use crate::runner::ResultRow;

/// Converts the information-valued columns at the output boundary.
pub fn in_units(row: &ResultRow, units: Units) -> ResultRow {
    match units {
        Units::Nats => row.clone(),
        Units::Bits => ResultRow {
            free_energy: row.free_energy.map(to_bits),
            mutual_info: row.mutual_info.map(to_bits),
            sim_free_energy: row.sim_free_energy.map(to_bits),
            sim_free_energy_stderr: row.sim_free_energy_stderr.map(to_bits),
            ..row.clone()
        },
    }
}

/// Header plus one record per row, RFC 4180 quoting.
pub fn write_csv<W: Write>(rows: &[ResultRow], units: Units, out: W) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(in_units(r, units))?;
    }
    if rows.is_empty() {
        w.write_record(HEADER)?;
    }
    w.flush()?;
    Ok(())
}

pub const HEADER: [&str; 14] = [
    "beta",
    "m",
    "eta",
    "xi",
    "free_energy",
    "mutual_info",
    "mmse",
    "sim_free_energy",
    "sim_free_energy_stderr",
    "mh_mse",
    "mh_mse_stderr",
    "amp_mse",
    "amp_mse_stderr",
    "error",
];

pub fn to_csv_string(rows: &[ResultRow], units: Units) -> String {
    let mut buf = Vec::new();
    write_csv(rows, units, &mut buf).expect("writing to memory cannot fail");
    String::from_utf8(buf).expect("csv output is UTF-8")
}
