use std::path::Path;

use crate::covariance::SpaceTimePoint;
use crate::error::{Error, Result};
use crate::estimation::ObservationSet;
use crate::kv::write_atomic;
use crate::table;

pub const OBS_HEADER: [&str; 4] = ["t", "x1", "x2", "value"];

pub fn parse_observations(source: &str, text: &str) -> Result<ObservationSet> {
    let rows = table::parse(source, text, &OBS_HEADER)?;
    if rows.is_empty() {
        return Err(Error::Parse {
            path: source.to_string(),
            line: 1,
            column: None,
            message: "no observations after the header".into(),
        });
    }
    for pair in rows.windows(2) {
        if pair[1].values[0] < pair[0].values[0] {
            return Err(Error::Parse {
                path: source.to_string(),
                line: pair[1].line,
                column: Some(1),
                message: format!(
                    "time {} follows {}; rows must be grouped by ascending time",
                    pair[1].values[0], pair[0].values[0]
                ),
            });
        }
    }
    let points = rows
        .iter()
        .map(|r| SpaceTimePoint::new(r.values[0], [r.values[1], r.values[2]]))
        .collect();
    let values = rows.iter().map(|r| r.values[3]).collect();
    ObservationSet::new(points, values)
}

pub fn read_observations(path: &Path) -> Result<ObservationSet> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_observations(&path.display().to_string(), &text)
}

pub fn render_observations(data: &ObservationSet) -> String {
    let rows: Vec<[f64; 4]> = data
        .points
        .iter()
        .zip(&data.values)
        .map(|(p, &y)| [p.t, p.x[0], p.x[1], y])
        .collect();
    table::render(&OBS_HEADER, rows.iter().map(|r| r.as_slice()))
}

pub fn write_observations(path: &Path, data: &ObservationSet) -> Result<()> {
    write_atomic(path, &render_observations(data))
}
