//! Design and calibration either in-process or through a running service.

use std::time::Duration;

use wincrt_client::Client;
use wincrt_core::api::CalibrationRequest;
use wincrt_core::design::{self, DesignInputs, DesignResult};
use wincrt_core::generative::{estimate_design_inputs, DesignInputEstimate};

use crate::CliError;

pub enum Planner {
    Local,
    Remote { client: Client, timeout: Duration },
}

impl Planner {
    pub fn new(remote: Option<&str>, timeout: Duration) -> Result<Self, CliError> {
        Ok(match remote {
            None => Planner::Local,
            Some(url) => Planner::Remote { client: Client::new(url)?, timeout },
        })
    }

    pub fn power(&self, d: &DesignInputs, m: u64) -> Result<DesignResult, CliError> {
        match self {
            Planner::Local => Ok(design::evaluate(d, m)?),
            Planner::Remote { client, .. } => Ok(client.power(&DesignInputs { m: Some(m), ..d.clone() })?),
        }
    }

    pub fn samplesize(&self, d: &DesignInputs) -> Result<DesignResult, CliError> {
        match self {
            Planner::Local => Ok(design::required_clusters(d)?),
            Planner::Remote { client, .. } => Ok(client.samplesize(d)?),
        }
    }

    pub fn calibrate(&self, req: &CalibrationRequest) -> Result<DesignInputEstimate, CliError> {
        match self {
            Planner::Local => Ok(estimate_design_inputs(&req.spec, &req.options)?),
            Planner::Remote { client, timeout } => Ok(client.calibrate(req, *timeout)?),
        }
    }
}
