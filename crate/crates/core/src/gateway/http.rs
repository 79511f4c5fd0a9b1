//! Blocking HTTP transport.

use std::time::Duration;

use super::{Transport, TransportError};

/// Largest response body accepted (base64 images included).
const BODY_LIMIT: u64 = 64 * 1024 * 1024;

pub struct HttpTransport {
    agent: ureq::Agent,
    endpoint: String,
    bearer: Option<String>,
}

impl HttpTransport {
    pub fn new(endpoint: &str, bearer: Option<String>) -> Self {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .http_status_as_error(false)
            .build()
            .into();
        HttpTransport {
            agent,
            endpoint: endpoint.to_string(),
            bearer,
        }
    }
}

impl Transport for HttpTransport {
    fn post(&self, body: &str, timeout: Duration) -> Result<(u16, String), TransportError> {
        let mut req = self
            .agent
            .post(&self.endpoint)
            .config()
            .timeout_global(Some(timeout))
            .build()
            .header("Content-Type", "application/json");
        if let Some(token) = &self.bearer {
            req = req.header("Authorization", format!("Bearer {token}"));
        }
        let map_err = |e: ureq::Error| match e {
            ureq::Error::Timeout(_) => TransportError::Timeout,
            other => TransportError::Io(other.to_string()),
        };
        let mut resp = req.send(body).map_err(map_err)?;
        let status = resp.status().as_u16();
        let text = resp
            .body_mut()
            .with_config()
            .limit(BODY_LIMIT)
            .read_to_string()
            .map_err(map_err)?;
        Ok((status, text))
    }
}
