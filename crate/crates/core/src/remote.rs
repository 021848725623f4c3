//! Blocking JSON-over-HTTP client shared by the remote providers.

use std::time::Duration;

use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct JsonClient {
    endpoint: String,
    agent: ureq::Agent,
}

impl JsonClient {
    pub fn new(endpoint: impl Into<String>, timeout: Duration) -> Self {
        JsonClient {
            endpoint: endpoint.into(),
            agent: ureq::AgentBuilder::new().timeout(timeout).build(),
        }
    }

    pub fn endpoint(&self) -> &str {
        &self.endpoint
    }

    pub fn post<Req: Serialize, Resp: DeserializeOwned>(&self, body: &Req) -> Result<Resp> {
        let response = match self.agent.post(&self.endpoint).send_json(body) {
            Ok(r) => r,
            Err(ureq::Error::Status(code, r)) => {
                let text = r.into_string().unwrap_or_default();
                return Err(Error::RemoteMalformed(format!("HTTP {code}: {text}")));
            }
            Err(ureq::Error::Transport(t)) => return Err(Error::RemoteUnreachable(t.to_string())),
        };
        response
            .into_json::<Resp>()
            .map_err(|e| Error::RemoteMalformed(e.to_string()))
    }
}
