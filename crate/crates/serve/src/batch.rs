//! Batch input parsing. Rows are validated independently so one bad row
//! never aborts the batch.

use oasis_core::tensorize::parse_timestamp;
use serde::{Deserialize, Serialize};

use crate::error::ErrorBody;
use crate::model::{ImputeRequest, ImputeResponse};
use crate::ServeError;

const REQUIRED: [&str; 3] = ["timestamp", "lat", "lon"];

/// Parse delimited text with a `timestamp,lat,lon[,tide]` header (any column
/// order, extra columns ignored). Returns one entry per data row.
pub fn parse_batch_csv(text: &str) -> Result<Vec<Result<ImputeRequest, ServeError>>, ServeError> {
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .flexible(true)
        .from_reader(text.as_bytes());
    let headers = reader
        .headers()
        .map_err(|e| ServeError::MalformedHeader(e.to_string()))?
        .clone();
    let find = |name: &str| headers.iter().position(|h| h.eq_ignore_ascii_case(name));
    let missing: Vec<_> = REQUIRED.iter().filter(|c| find(c).is_none()).copied().collect();
    if !missing.is_empty() {
        return Err(ServeError::MalformedHeader(format!("missing column(s): {}", missing.join(", "))));
    }
    let (ti, lai, loi) = (find("timestamp").unwrap(), find("lat").unwrap(), find("lon").unwrap());
    let tide = find("tide").or_else(|| find("tide_override"));
    Ok(reader
        .records()
        .map(|rec| {
            let rec = rec.map_err(|e| ServeError::InvalidRequest(e.to_string()))?;
            let field = |i: usize| rec.get(i).unwrap_or("");
            let num = |i: usize, name: &str| {
                field(i)
                    .parse::<f64>()
                    .map_err(|_| ServeError::InvalidRequest(format!("{name} {:?} is not a number", field(i))))
            };
            let timestamp = parse_timestamp(field(ti))
                .ok_or_else(|| ServeError::InvalidRequest(format!("unparseable timestamp {:?}", field(ti))))?;
            let tide_override = match tide.map(field) {
                None | Some("") => None,
                Some(_) => Some(num(tide.unwrap(), "tide")?),
            };
            let req = ImputeRequest {
                timestamp,
                lat: num(lai, "lat")?,
                lon: num(loi, "lon")?,
                tide_override,
            };
            req.validate()?;
            Ok(req)
        })
        .collect())
}

/// Parse a JSON array of request objects; malformed elements become
/// per-row errors.
pub fn parse_batch_json(text: &str) -> Result<Vec<Result<ImputeRequest, ServeError>>, ServeError> {
    let rows: Vec<serde_json::Value> =
        serde_json::from_str(text).map_err(|e| ServeError::InvalidRequest(format!("expected a JSON array: {e}")))?;
    Ok(rows
        .into_iter()
        .map(|v| {
            let req: ImputeRequest = serde_json::from_value(v).map_err(|e| ServeError::InvalidRequest(e.to_string()))?;
            req.validate()?;
            Ok(req)
        })
        .collect())
}

/// One batch row's outcome, tagged with its 0-based input index.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchItem {
    pub index: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub response: Option<ImputeResponse>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<ErrorBody>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchResponse {
    pub model_version: String,
    pub succeeded: usize,
    pub failed: usize,
    pub results: Vec<BatchItem>,
}

impl BatchResponse {
    pub fn from_results(model_version: String, results: Vec<Result<ImputeResponse, ServeError>>) -> Self {
        let results: Vec<BatchItem> = results
            .into_iter()
            .enumerate()
            .map(|(index, r)| match r {
                Ok(resp) => BatchItem {
                    index,
                    response: Some(resp),
                    error: None,
                },
                Err(e) => BatchItem {
                    index,
                    response: None,
                    error: Some(e.body()),
                },
            })
            .collect();
        let succeeded = results.iter().filter(|r| r.response.is_some()).count();
        Self {
            model_version,
            succeeded,
            failed: results.len() - succeeded,
            results,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_rows_keep_order_and_errors() {
        let text = "timestamp,lat,lon,tide\n2016-06-16T00:00:00Z,29.1,-89.5,\n2016-06-16T01:00:00Z,999,-89.5,0.3\nnot-a-time,29,-89,\n2016-06-16 02:00,29.2,-89.4,0.5\n";
        let rows = parse_batch_csv(text).unwrap();
        assert_eq!(rows.len(), 4);
        assert!(rows[0].as_ref().unwrap().tide_override.is_none());
        assert!(matches!(rows[1], Err(ServeError::InvalidRequest(_))));
        assert!(matches!(rows[2], Err(ServeError::InvalidRequest(_))));
        assert_eq!(rows[3].as_ref().unwrap().tide_override, Some(0.5));
    }

    #[test]
    fn column_order_is_free() {
        let rows = parse_batch_csv("lon,extra,lat,timestamp\n-89.5,x,29.1,2016-06-16T00:00:00Z\n").unwrap();
        let r = rows[0].as_ref().unwrap();
        assert_eq!((r.lat, r.lon), (29.1, -89.5));
    }

    #[test]
    fn missing_column_is_malformed_header() {
        match parse_batch_csv("timestamp,latitude,lon\n2016-06-16T00:00:00Z,1,2\n") {
            Err(ServeError::MalformedHeader(m)) => assert!(m.contains("lat")),
            other => panic!("{other:?}"),
        }
        assert!(matches!(parse_batch_csv(""), Err(ServeError::MalformedHeader(_))));
    }

    #[test]
    fn json_rows() {
        let text = r#"[{"timestamp":"2016-06-16T00:00:00Z","lat":29.1,"lon":-89.5},{"lat":1},{"timestamp":"2016-06-16T00:00:00Z","lat":29.1,"lon":-89.5,"tide_override":0.2}]"#;
        let rows = parse_batch_json(text).unwrap();
        assert!(rows[0].is_ok() && rows[1].is_err());
        assert_eq!(rows[2].as_ref().unwrap().tide_override, Some(0.2));
        assert!(parse_batch_json("{}").is_err());
    }
}
