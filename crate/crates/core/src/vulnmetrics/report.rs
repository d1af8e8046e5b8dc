use std::io::Write;

use super::{MetricsError, StructureLedgers, StructureReport};

pub const REPORT_SCHEMA_VERSION: u32 = 1;

const CSV_COLUMNS: &str = "structure,words,size_bytes,roi_cycles,mvf,fea,safe_ratio,dvf,dvf_relative,\
ld_st,ld_st_normalized,mem_loads,mem_stores,untouched_words";

pub fn write_csv<W: Write>(reports: &[StructureReport], mut w: W) -> Result<(), MetricsError> {
    writeln!(w, "# memvuln structure report, schema v{REPORT_SCHEMA_VERSION}")?;
    writeln!(w, "{CSV_COLUMNS}")?;
    for r in reports {
        writeln!(
            w,
            "{},{},{},{},{:.9},{:.9},{:.9},{:.6e},{:.6},{},{:.6},{},{},{}",
            r.structure,
            r.words,
            r.size_bytes,
            r.roi_cycles,
            r.mvf,
            r.fea,
            r.safe_ratio,
            r.dvf,
            r.dvf_relative,
            r.ld_st,
            r.ld_st_normalized,
            r.mem_loads,
            r.mem_stores,
            r.untouched_words
        )?;
    }
    Ok(())
}

#[derive(serde::Serialize)]
struct JsonReport<'a> {
    schema_version: u32,
    structures: &'a [StructureReport],
}

pub fn write_json<W: Write>(reports: &[StructureReport], w: W) -> Result<(), MetricsError> {
    // serde_json writes infinity as null, which is what LD/ST with no stores becomes.
    serde_json::to_writer_pretty(
        w,
        &JsonReport {
            schema_version: REPORT_SCHEMA_VERSION,
            structures: reports,
        },
    )?;
    Ok(())
}

/// Per-structure histograms of word MVF and FEA over `bins` equal bins of [0, 1].
pub fn write_histogram<W: Write>(ledgers: &[StructureLedgers], bins: usize, mut w: W) -> Result<(), MetricsError> {
    let bins = bins.max(1);
    writeln!(w, "# memvuln word histogram, schema v{REPORT_SCHEMA_VERSION}")?;
    writeln!(w, "structure,bin_lo,bin_hi,mvf_words,fea_words")?;
    for s in ledgers {
        let mut mvf = vec![0u64; bins];
        let mut fea = vec![0u64; bins];
        let bin = |v: f64| ((v * bins as f64) as usize).min(bins - 1);
        for word in &s.words {
            mvf[bin(word.mvf()?)] += 1;
            fea[bin(word.fea()?)] += 1;
        }
        for b in 0..bins {
            writeln!(
                w,
                "{},{:.4},{:.4},{},{}",
                s.id,
                b as f64 / bins as f64,
                (b + 1) as f64 / bins as f64,
                mvf[b],
                fea[b]
            )?;
        }
    }
    Ok(())
}
