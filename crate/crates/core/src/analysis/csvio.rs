use super::ParetoPoint;
use crate::error::{Error, Result};
use std::io::{Read, Write};

pub const FRONT_CSV_HEADER: &str = "label,size_bytes,metric,metric_source";

/// Where the metric column came from. Loss columns are negated on input so
/// that higher is always better.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MetricSource {
    Metric,
    NegatedLoss,
}

impl MetricSource {
    pub fn as_str(self) -> &'static str {
        match self {
            MetricSource::Metric => "metric",
            MetricSource::NegatedLoss => "negated_loss",
        }
    }
}

fn parse_err(line: u64, field: &str, message: impl Into<String>) -> Error {
    Error::Parse {
        field: format!("line {line}: {field}"),
        message: message.into(),
    }
}

/// Reads `size_bytes` plus either `metric` or `loss`, and an optional
/// `label` column, in any order.
pub fn read_points(input: impl Read) -> Result<(Vec<ParetoPoint>, MetricSource)> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(input);
    let headers = rdr.headers()?.clone();
    let col = |name: &str| headers.iter().position(|h| h == name);
    let size_col = col("size_bytes").ok_or_else(|| parse_err(1, "size_bytes", "missing column"))?;
    let (metric_col, source) = match (col("metric"), col("loss")) {
        (Some(_), Some(_)) => return Err(parse_err(1, "metric", "give either metric or loss, not both")),
        (Some(c), None) => (c, MetricSource::Metric),
        (None, Some(c)) => (c, MetricSource::NegatedLoss),
        (None, None) => return Err(parse_err(1, "metric", "missing metric or loss column")),
    };
    let label_col = col("label");
    let mut points = Vec::new();
    for record in rdr.records() {
        let record = record?;
        let line = record.position().map_or(0, |p| p.line());
        let num = |c: usize, name: &str| -> Result<f64> {
            let text = record.get(c).unwrap_or("");
            text.parse::<f64>()
                .map_err(|_| parse_err(line, name, format!("{text:?} is not a number")))
        };
        let size = num(size_col, "size_bytes")?;
        let raw = num(metric_col, source_name(source))?;
        let metric = match source {
            MetricSource::Metric => raw,
            MetricSource::NegatedLoss => -raw,
        };
        let label = label_col.and_then(|c| record.get(c)).unwrap_or("").to_string();
        let point = ParetoPoint::new(size, metric, label).map_err(|e| match e {
            Error::InvalidArgument(m) => parse_err(line, if m.starts_with("size") { "size_bytes" } else { source_name(source) }, m),
            other => other,
        })?;
        points.push(point);
    }
    Ok((points, source))
}

fn source_name(source: MetricSource) -> &'static str {
    match source {
        MetricSource::Metric => "metric",
        MetricSource::NegatedLoss => "loss",
    }
}

pub fn write_front(out: impl Write, front: &[ParetoPoint], source: MetricSource) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(FRONT_CSV_HEADER.split(','))?;
    for p in front {
        w.write_record([
            p.label.as_str(),
            &p.size_bytes.to_string(),
            &p.metric.to_string(),
            source.as_str(),
        ])?;
    }
    w.flush()?;
    Ok(())
}
