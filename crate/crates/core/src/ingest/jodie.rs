use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::{Event, EventStream};
use crate::{Error, Result};

pub const JODIE_HEADER: &str =
    "user_id,item_id,timestamp,state_label,comma_separated_list_of_features";

/// Reads a JODIE interaction file.
///
/// Rows are `source,destination,timestamp,state_label,f_1,...,f_De` after a
/// single header row. The state label is checked for being numeric and then
/// dropped. Destination ids are shifted past the largest source id.
pub fn parse_jodie_csv(path: impl AsRef<Path>) -> Result<EventStream> {
    let file = File::open(path)?;
    read_jodie(BufReader::new(file))
}

pub fn read_jodie<R: Read>(reader: R) -> Result<EventStream> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(reader);

    // (source, raw destination, timestamp, features)
    let mut rows: Vec<(usize, usize, f64, Vec<f64>)> = Vec::new();
    let mut width: Option<usize> = None;
    let mut last_ts = f64::NEG_INFINITY;

    for record in rdr.records() {
        let record = record?;
        let line = record.position().map(|p| p.line()).unwrap_or(0);
        let parse_err = |message: String| Error::Parse { line, message };

        let cols = record.len();
        if cols < 4 {
            return Err(parse_err(format!(
                "expected at least 4 columns, found {cols}"
            )));
        }
        match width {
            None => width = Some(cols),
            Some(w) if w != cols => {
                return Err(parse_err(format!("expected {w} columns, found {cols}")));
            }
            _ => {}
        }

        let source: usize = record[0]
            .parse()
            .map_err(|_| parse_err(format!("bad source id `{}`", &record[0])))?;
        let destination: usize = record[1]
            .parse()
            .map_err(|_| parse_err(format!("bad destination id `{}`", &record[1])))?;
        let timestamp = parse_real(&record[2])
            .ok_or_else(|| parse_err(format!("bad timestamp `{}`", &record[2])))?;
        parse_real(&record[3])
            .ok_or_else(|| parse_err(format!("bad state label `{}`", &record[3])))?;
        let features = (4..cols)
            .map(|c| {
                parse_real(&record[c]).ok_or_else(|| {
                    parse_err(format!("bad feature `{}` in column {}", &record[c], c + 1))
                })
            })
            .collect::<Result<Vec<f64>>>()?;

        if timestamp < 0.0 {
            return Err(Error::Validation {
                line,
                message: format!("negative timestamp {timestamp}"),
            });
        }
        if timestamp < last_ts {
            return Err(Error::Validation {
                line,
                message: format!("timestamp {timestamp} precedes previous {last_ts}"),
            });
        }
        last_ts = timestamp;
        rows.push((source, destination, timestamp, features));
    }

    let num_sources = rows.iter().map(|r| r.0 + 1).max().unwrap_or(0);
    let num_destinations = rows.iter().map(|r| r.1 + 1).max().unwrap_or(0);
    let d_edge = width.map(|w| w - 4).unwrap_or(0);
    let events = rows
        .into_iter()
        .enumerate()
        .map(|(event_id, (source, dst, timestamp, features))| Event {
            event_id,
            source,
            destination: dst + num_sources,
            timestamp,
            features,
        })
        .collect();
    Ok(EventStream {
        events,
        num_sources,
        num_destinations,
        d_edge,
    })
}

fn parse_real(field: &str) -> Option<f64> {
    field.parse::<f64>().ok().filter(|v| v.is_finite())
}

pub fn write_jodie_csv(stream: &EventStream, path: impl AsRef<Path>) -> Result<()> {
    let file = File::create(path)?;
    let mut out = BufWriter::new(file);
    write_jodie(stream, &mut out)?;
    out.flush()?;
    Ok(())
}

/// Writes `stream` in JODIE layout with a zero state label. Reals are written
/// in shortest round-trip form, so re-reading restores them exactly.
pub fn write_jodie<W: Write>(stream: &EventStream, out: &mut W) -> Result<()> {
    writeln!(out, "{JODIE_HEADER}")?;
    for e in &stream.events {
        write!(
            out,
            "{},{},{},0",
            e.source,
            e.destination - stream.num_sources,
            e.timestamp
        )?;
        for f in &e.features {
            write!(out, ",{f}")?;
        }
        writeln!(out)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn read(text: &str) -> Result<EventStream> {
        read_jodie(text.as_bytes())
    }

    #[test]
    fn three_rows_with_two_features() {
        let s = read(
            "user_id,item_id,timestamp,state_label,f\n\
             0,0,1.0,0,0.5,1.5\n\
             1,1,2.0,0,0.0,2.0\n\
             0,1,2.0,1,3.0,-1.0\n",
        )
        .unwrap();
        assert_eq!(s.len(), 3);
        assert_eq!(s.d_edge, 2);
        assert_eq!(s.num_sources, 2);
        assert_eq!(s.num_destinations, 2);
        assert_eq!(s.events[2].destination, 3);
        assert_eq!(s.events[2].features, vec![3.0, -1.0]);
        assert_eq!(
            s.events.iter().map(|e| e.timestamp).collect::<Vec<_>>(),
            vec![1.0, 2.0, 2.0]
        );
        s.validate().unwrap();
    }

    #[test]
    fn no_feature_columns() {
        let s = read("h\n0,0,1,0\n1,0,2,0\n").unwrap();
        assert_eq!(s.d_edge, 0);
        assert!(s.events.iter().all(|e| e.features.is_empty()));
    }

    #[test]
    fn decreasing_timestamp_reports_file_line() {
        let mut text = String::from("user_id,item_id,timestamp,state_label\n");
        let ts = [1.0, 2.0, 3.0, 4.0, 5.5, 6.0, 5.0, 7.0, 8.0, 9.0];
        for (i, t) in ts.iter().enumerate() {
            text.push_str(&format!("{},{},{},0\n", i % 3, i % 4, t));
        }
        match read(&text) {
            Err(Error::Validation { line, .. }) => assert_eq!(line, 8),
            other => panic!("expected validation error, got {other:?}"),
        }
    }

    #[test]
    fn wrong_column_count_is_parse_error() {
        match read("h\n0,0,1,0,1.0\n0,0,2,0\n") {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn non_numeric_field_is_parse_error() {
        match read("h\n0,0,1,0\n0,x,2,0\n") {
            Err(Error::Parse { line, message }) => {
                assert_eq!(line, 3);
                assert!(message.contains("destination"));
            }
            other => panic!("expected parse error, got {other:?}"),
        }
        assert!(matches!(read("h\n0,0,abc,0\n"), Err(Error::Parse { .. })));
        assert!(matches!(read("h\n0,0,1,zz\n"), Err(Error::Parse { .. })));
    }

    #[test]
    fn header_only_is_empty_stream() {
        let s = read(&format!("{JODIE_HEADER}\n")).unwrap();
        assert!(s.is_empty());
    }

    #[test]
    fn write_then_read() {
        let s = read("h\n0,2,1e-7,0,0.30000000000000004,-0\n3,0,0.1,0,1,2\n").unwrap();
        let mut buf = Vec::new();
        write_jodie(&s, &mut buf).unwrap();
        let back = read_jodie(buf.as_slice()).unwrap();
        assert_eq!(back, s);
    }
}
