//! Blocking client for the planning service.

use std::time::{Duration, Instant};

use serde::de::DeserializeOwned;
use serde::Serialize;
use thiserror::Error;

use wincrt_core::api::{CalibrationRequest, ErrorBody, JobState, JobStatus};
use wincrt_core::design::{ContourRequest, ContourResult, DesignInputs, DesignResult};
use wincrt_core::generative::DesignInputEstimate;

#[derive(Debug, Error)]
pub enum ClientError {
    #[error("transport error: {0}")]
    Transport(#[from] reqwest::Error),

    /// The service answered with an error body.
    #[error("service returned {status}: {}", .body.message)]
    Api { status: u16, body: ErrorBody },

    #[error("calibration job `{0}` did not finish within the timeout")]
    Timeout(String),
}

pub type Result<T> = std::result::Result<T, ClientError>;

pub struct Client {
    base: String,
    http: reqwest::blocking::Client,
    poll_interval: Duration,
}

impl Client {
    pub fn new(base_url: &str) -> Result<Self> {
        let http = reqwest::blocking::Client::builder().timeout(Duration::from_secs(300)).build()?;
        Ok(Client { base: base_url.trim_end_matches('/').to_string(), http, poll_interval: Duration::from_millis(200) })
    }

    pub fn with_poll_interval(mut self, d: Duration) -> Self {
        self.poll_interval = d;
        self
    }

    fn url(&self, path: &str) -> String {
        format!("{}{path}", self.base)
    }

    fn decode<T: DeserializeOwned>(resp: reqwest::blocking::Response) -> Result<T> {
        let status = resp.status();
        if status.is_success() {
            return Ok(resp.json()?);
        }
        let code = status.as_u16();
        let text = resp.text()?;
        let body = serde_json::from_str(&text).unwrap_or_else(|_| ErrorBody::new("internal", text));
        Err(ClientError::Api { status: code, body })
    }

    fn post<B: Serialize, T: DeserializeOwned>(&self, path: &str, body: &B) -> Result<T> {
        Self::decode(self.http.post(self.url(path)).json(body).send()?)
    }

    pub fn health(&self) -> Result<serde_json::Value> {
        Self::decode(self.http.get(self.url("/health")).send()?)
    }

    /// Power at `inputs.m`.
    pub fn power(&self, inputs: &DesignInputs) -> Result<DesignResult> {
        self.post("/power", inputs)
    }

    pub fn samplesize(&self, inputs: &DesignInputs) -> Result<DesignResult> {
        self.post("/samplesize", inputs)
    }

    pub fn contour(&self, req: &ContourRequest) -> Result<ContourResult> {
        self.post("/contour", req)
    }

    /// Submit a calibration job without waiting.
    pub fn submit_calibration(&self, req: &CalibrationRequest) -> Result<JobStatus> {
        self.post("/calibrate", req)
    }

    pub fn job(&self, id: &str) -> Result<JobStatus> {
        Self::decode(self.http.get(self.url(&format!("/calibrate/{id}"))).send()?)
    }

    /// Submit a calibration job and poll until it finishes.
    pub fn calibrate(&self, req: &CalibrationRequest, timeout: Duration) -> Result<DesignInputEstimate> {
        let start = Instant::now();
        let mut status = self.submit_calibration(req)?;
        loop {
            match status.state {
                JobState::Done => {
                    return status.result.ok_or_else(|| ClientError::Api {
                        status: 500,
                        body: ErrorBody::new("internal", "finished job carries no result"),
                    })
                }
                JobState::Failed => {
                    let body = status.error.unwrap_or_else(|| ErrorBody::new("internal", "job failed"));
                    return Err(ClientError::Api { status: body.status(), body });
                }
                JobState::Queued | JobState::Running => {}
            }
            if start.elapsed() > timeout {
                return Err(ClientError::Timeout(status.id));
            }
            std::thread::sleep(self.poll_interval);
            status = self.job(&status.id)?;
        }
    }
}
