//! Dataset files: one record per line, tab-separated, no header.
//!
//! Field order: `scenario  user  item  click  order  context`, where click and
//! order are `0`/`1` and context is a comma-joined list of bucket ids (empty
//! when the record has no context fields).

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use super::record::ExampleRecord;
use crate::error::{Error, Result};

pub fn write_records<W: Write>(records: &[ExampleRecord], out: W) -> Result<()> {
    let mut out = BufWriter::new(out);
    for r in records {
        r.validate()?;
        let ctx: Vec<String> = r.context.iter().map(usize::to_string).collect();
        writeln!(
            out,
            "{}\t{}\t{}\t{}\t{}\t{}",
            r.scenario,
            r.user,
            r.item,
            u8::from(r.click),
            u8::from(r.order),
            ctx.join(",")
        )?;
    }
    out.flush()?;
    Ok(())
}

fn parse_flag(s: &str, what: &str) -> std::result::Result<bool, String> {
    match s {
        "0" => Ok(false),
        "1" => Ok(true),
        _ => Err(format!("{what} must be 0 or 1, got `{s}`")),
    }
}

fn parse_id(s: &str, what: &str) -> std::result::Result<usize, String> {
    s.parse().map_err(|_| format!("{what} is not a non-negative integer: `{s}`"))
}

/// Parses one line. `line` in errors is 1-based.
pub fn parse_record(text: &str, line: usize) -> Result<ExampleRecord> {
    let fail = |detail: String| Error::Parse { line, detail };
    let fields: Vec<&str> = text.split('\t').collect();
    if fields.len() != 6 {
        return Err(fail(format!("expected 6 tab-separated fields, found {}", fields.len())));
    }
    let context = if fields[5].is_empty() {
        Vec::new()
    } else {
        fields[5].split(',').map(|c| parse_id(c, "context id")).collect::<std::result::Result<_, _>>().map_err(fail)?
    };
    let record = ExampleRecord {
        scenario: parse_id(fields[0], "scenario").map_err(fail)?,
        user: parse_id(fields[1], "user").map_err(fail)?,
        item: parse_id(fields[2], "item").map_err(fail)?,
        click: parse_flag(fields[3], "click").map_err(fail)?,
        order: parse_flag(fields[4], "order").map_err(fail)?,
        context,
    };
    record.validate().map_err(|e| fail(e.to_string()))?;
    Ok(record)
}

pub fn read_records<R: BufRead>(input: R) -> Result<Vec<ExampleRecord>> {
    let mut out = Vec::new();
    for (i, line) in input.lines().enumerate() {
        let line = line?;
        let line = line.strip_suffix('\r').unwrap_or(&line);
        out.push(parse_record(line, i + 1)?);
    }
    Ok(out)
}

pub fn write_dataset(records: &[ExampleRecord], path: &Path) -> Result<()> {
    write_records(records, File::create(path)?)
}

pub fn read_dataset(path: &Path) -> Result<Vec<ExampleRecord>> {
    let file = File::open(path).map_err(|e| Error::Load {
        path: path.to_path_buf(),
        detail: e.to_string(),
    })?;
    read_records(BufReader::new(file))
}
