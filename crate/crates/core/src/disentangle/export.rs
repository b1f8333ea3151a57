//! CSV dumps of banks, filters and per-window spectra.

use std::path::Path;

use super::{EmbeddingBank, FrequencyFilter};
use crate::error::{Error, Result};
use crate::numcore::ComplexArray;

fn writer(path: &Path) -> Result<csv::Writer<std::fs::File>> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    Ok(csv::Writer::from_writer(file))
}

/// Columns `bank,slot,bin,channel,value`.
pub fn write_banks(path: &Path, banks: &[EmbeddingBank]) -> Result<()> {
    let mut w = writer(path)?;
    w.write_record(["bank", "slot", "bin", "channel", "value"])?;
    for bank in banks {
        let (f, d) = (bank.bins(), bank.channels());
        for m in 0..bank.layout.slots {
            for k in 0..f {
                for c in 0..d {
                    w.write_record([
                        bank.name.clone(),
                        m.to_string(),
                        k.to_string(),
                        c.to_string(),
                        bank.values.at3(m, k, c).to_string(),
                    ])?;
                }
            }
        }
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Columns `bin,re,im`.
pub fn write_filter(path: &Path, filter: &FrequencyFilter) -> Result<()> {
    let mut w = writer(path)?;
    w.write_record(["bin", "re", "im"])?;
    for (k, (re, im)) in filter.re.iter().zip(&filter.im).enumerate() {
        w.write_record([k.to_string(), re.to_string(), im.to_string()])?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Columns `window,bin,channel,re,im`; each spectrum is `F × D`.
pub fn write_spectra(path: &Path, spectra: &[(usize, ComplexArray)]) -> Result<()> {
    let mut w = writer(path)?;
    w.write_record(["window", "bin", "channel", "re", "im"])?;
    for (window, z) in spectra {
        let (f, d) = (z.rows(), z.row_len());
        for k in 0..f {
            for c in 0..d {
                let i = k * d + c;
                w.write_record([
                    window.to_string(),
                    k.to_string(),
                    c.to_string(),
                    z.re()[i].to_string(),
                    z.im()[i].to_string(),
                ])?;
            }
        }
    }
    w.flush().map_err(|e| Error::io(path, e))
}
