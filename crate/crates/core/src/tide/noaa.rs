//! NOAA CO-OPS tide prediction retrieval.
//!
//! Requests use `product=predictions&interval=hilo&units=metric&time_zone=gmt&format=json`;
//! responses look like
//! `{"predictions":[{"t":"2016-06-16 02:42","v":"0.215","type":"L"}, ...]}`.
//! Fixture files hold these bodies verbatim, one per station and date range.

use std::path::{Path, PathBuf};

use chrono::{NaiveDate, NaiveDateTime};
use serde::Deserialize;

use super::{TideError, TideEvent};

pub const NOAA_DATA_ENDPOINT: &str = "https://api.tidesandcurrents.noaa.gov/api/prod/datagetter";
/// Fort Pierce Inlet, FL.
pub const DEFAULT_STATION: &str = "8722212";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PredictionRequest {
    pub station: String,
    pub begin: NaiveDate,
    pub end: NaiveDate,
}

impl PredictionRequest {
    pub fn new(station: impl Into<String>, begin: NaiveDate, end: NaiveDate) -> Self {
        Self {
            station: station.into(),
            begin,
            end,
        }
    }

    pub fn range_label(&self) -> String {
        format!("{}..{}", self.begin, self.end)
    }

    /// Query parameters in the order they are sent.
    pub fn query(&self) -> Vec<(&'static str, String)> {
        vec![
            ("station", self.station.clone()),
            ("begin_date", self.begin.format("%Y%m%d").to_string()),
            ("end_date", self.end.format("%Y%m%d").to_string()),
            ("product", "predictions".into()),
            ("datum", "MLLW".into()),
            ("interval", "hilo".into()),
            ("units", "metric".into()),
            ("time_zone", "gmt".into()),
            ("format", "json".into()),
        ]
    }

    pub fn url(&self) -> String {
        let q: Vec<String> = self.query().into_iter().map(|(k, v)| format!("{k}={v}")).collect();
        format!("{NOAA_DATA_ENDPOINT}?{}", q.join("&"))
    }

    pub fn fixture_name(&self) -> String {
        format!(
            "{}_{}_{}.json",
            self.station,
            self.begin.format("%Y%m%d"),
            self.end.format("%Y%m%d")
        )
    }
}

/// Source of raw CO-OPS response bodies.
pub trait NoaaClient: Send + Sync {
    fn fetch_raw(&self, request: &PredictionRequest) -> Result<String, TideError>;
}

/// Reads recorded responses from `<dir>/<station>_<begin>_<end>.json`.
#[derive(Debug, Clone)]
pub struct FixtureClient {
    dir: PathBuf,
}

impl FixtureClient {
    pub fn new(dir: impl AsRef<Path>) -> Self {
        Self {
            dir: dir.as_ref().to_path_buf(),
        }
    }

    pub fn path_for(&self, request: &PredictionRequest) -> PathBuf {
        self.dir.join(request.fixture_name())
    }
}

impl NoaaClient for FixtureClient {
    fn fetch_raw(&self, request: &PredictionRequest) -> Result<String, TideError> {
        let path = self.path_for(request);
        std::fs::read_to_string(&path).map_err(|e| TideError::NetworkError {
            station: request.station.clone(),
            range: request.range_label(),
            message: format!("fixture {}: {e}", path.display()),
        })
    }
}

#[cfg(feature = "live-noaa")]
#[derive(Debug, Clone, Default)]
pub struct HttpClient;

#[cfg(feature = "live-noaa")]
impl NoaaClient for HttpClient {
    fn fetch_raw(&self, request: &PredictionRequest) -> Result<String, TideError> {
        let net = |message: String| TideError::NetworkError {
            station: request.station.clone(),
            range: request.range_label(),
            message,
        };
        let mut req = ureq::get(NOAA_DATA_ENDPOINT);
        for (k, v) in request.query() {
            req = req.query(k, v);
        }
        let mut resp = req.call().map_err(|e| net(e.to_string()))?;
        resp.body_mut().read_to_string().map_err(|e| net(e.to_string()))
    }
}

#[derive(Deserialize)]
struct RawEntry {
    t: Option<String>,
    v: Option<serde_json::Value>,
    #[serde(rename = "type")]
    kind: Option<String>,
}

#[derive(Deserialize)]
#[serde(untagged)]
enum RawBody {
    Wrapped {
        predictions: Vec<serde_json::Value>,
    },
    Error {
        error: serde_json::Value,
    },
    Bare(Vec<serde_json::Value>),
}

/// Parse a CO-OPS predictions body. Accepts the `{"predictions": [...]}`
/// envelope or a bare list.
pub fn parse_predictions(body: &str) -> Result<Vec<TideEvent>, TideError> {
    let raw: RawBody = serde_json::from_str(body).map_err(|e| TideError::ParseError(e.to_string()))?;
    let entries = match raw {
        RawBody::Wrapped { predictions } => predictions,
        RawBody::Bare(list) => list,
        RawBody::Error { error } => {
            let msg = error
                .get("message")
                .and_then(|m| m.as_str())
                .map(str::to_string)
                .unwrap_or_else(|| error.to_string());
            return Err(TideError::ParseError(format!("service error: {msg}")));
        }
    };
    if entries.is_empty() {
        return Err(TideError::EmptyResponse);
    }
    entries
        .into_iter()
        .enumerate()
        .map(|(i, value)| {
            let row = i + 1;
            let bad = |what: &str| TideError::ParseError(format!("row {row}: {what}"));
            let entry: RawEntry = serde_json::from_value(value).map_err(|e| bad(&e.to_string()))?;
            let t = entry.t.ok_or_else(|| bad("missing `t`"))?;
            let timestamp = NaiveDateTime::parse_from_str(&t, "%Y-%m-%d %H:%M")
                .map_err(|_| bad(&format!("bad time `{t}`")))?
                .and_utc();
            let height = match entry.v {
                Some(serde_json::Value::String(s)) => s.trim().parse::<f64>().ok(),
                Some(serde_json::Value::Number(n)) => n.as_f64(),
                _ => None,
            }
            .filter(|h| h.is_finite())
            .ok_or_else(|| bad("missing or non-numeric `v`"))?;
            Ok(TideEvent {
                timestamp,
                height,
                kind: entry.kind,
            })
        })
        .collect()
}

/// Fetch and parse predictions for a station and inclusive date range.
pub fn fetch_noaa_predictions(
    client: &dyn NoaaClient,
    station: &str,
    begin: NaiveDate,
    end: NaiveDate,
) -> Result<Vec<TideEvent>, TideError> {
    let request = PredictionRequest::new(station, begin, end);
    let body = client.fetch_raw(&request)?;
    parse_predictions(&body)
}

#[cfg(test)]
mod tests {
    use super::*;

    const FOUR: &str = r#"{ "predictions" : [
        {"t":"2016-06-16 02:42", "v":"0.215", "type":"L"},
        {"t":"2016-06-16 08:51", "v":"0.893", "type":"H"},
        {"t":"2016-06-16 15:05", "v":"0.171", "type":"L"},
        {"t":"2016-06-16 21:13", "v":"0.958", "type":"H"}
    ]}"#;

    fn day() -> NaiveDate {
        NaiveDate::from_ymd_opt(2016, 6, 16).unwrap()
    }

    #[test]
    fn parses_recorded_payload() {
        let events = parse_predictions(FOUR).unwrap();
        assert_eq!(events.len(), 4);
        assert_eq!(events[1].height, 0.893);
        assert_eq!(events[1].kind.as_deref(), Some("H"));
        assert_eq!(events[0].timestamp.to_rfc3339(), "2016-06-16T02:42:00+00:00");
    }

    #[test]
    fn empty_and_malformed() {
        assert!(matches!(parse_predictions(r#"{"predictions": []}"#), Err(TideError::EmptyResponse)));
        let bad = r#"[{"t":"2016-06-16 02:42","v":"0.2"},{"t":"2016-06-16 08:51","v":"high"}]"#;
        match parse_predictions(bad) {
            Err(TideError::ParseError(msg)) => assert!(msg.contains("row 2"), "{msg}"),
            other => panic!("expected parse error, got {other:?}"),
        }
        let err = r#"{"error": {"message": "No Predictions data was found."}}"#;
        assert!(matches!(parse_predictions(err), Err(TideError::ParseError(m)) if m.contains("No Predictions")));
    }

    #[test]
    fn request_shape() {
        let r = PredictionRequest::new(DEFAULT_STATION, day(), day());
        let url = r.url();
        for part in [
            "station=8722212",
            "begin_date=20160616",
            "end_date=20160616",
            "product=predictions",
            "interval=hilo",
            "units=metric",
            "time_zone=gmt",
            "format=json",
        ] {
            assert!(url.contains(part), "{url} lacks {part}");
        }
        assert_eq!(r.fixture_name(), "8722212_20160616_20160616.json");
    }

    #[test]
    fn fixture_client_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let client = FixtureClient::new(dir.path());
        let req = PredictionRequest::new(DEFAULT_STATION, day(), day());
        std::fs::write(client.path_for(&req), FOUR).unwrap();
        let a = fetch_noaa_predictions(&client, DEFAULT_STATION, day(), day()).unwrap();
        let b = fetch_noaa_predictions(&client, DEFAULT_STATION, day(), day()).unwrap();
        assert_eq!(a, b);
        let other = NaiveDate::from_ymd_opt(2016, 6, 17).unwrap();
        assert!(matches!(
            fetch_noaa_predictions(&client, DEFAULT_STATION, other, other),
            Err(TideError::NetworkError { .. })
        ));
    }
}
