use std::time::Duration;

use wincrt_client::{Client, ClientError};
use wincrt_core::api::CalibrationRequest;
use wincrt_core::design::{self, CompositeProbs, DesignInputs, Estimand};
use wincrt_core::generative::ordinal::OrdinalGenSpec;
use wincrt_core::generative::{estimate_design_inputs, ClusterSize, EstimationOptions, GenerativeSpec};
use wincrt_service::{serve, ServiceConfig};

/// Starts a service on an ephemeral port in a background runtime.
fn spawn_service() -> String {
    let (tx, rx) = std::sync::mpsc::channel();
    std::thread::spawn(move || {
        let rt = tokio::runtime::Builder::new_multi_thread().worker_threads(2).enable_all().build().unwrap();
        rt.block_on(async {
            let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
            tx.send(listener.local_addr().unwrap()).unwrap();
            serve(listener, ServiceConfig::default()).await.unwrap();
        });
    });
    format!("http://{}", rx.recv().unwrap())
}

fn stride() -> DesignInputs {
    DesignInputs {
        composite_probs: Some(CompositeProbs { p_w: 0.314, p_t: 0.372, p_ww: 0.121, p_wt: 0.131, p_tt: 0.218 }),
        m: Some(86),
        ..DesignInputs::single(Estimand::LogWR, 0.1273, 0.371, 0.003, 63.4, 0.517)
    }
}

#[test]
fn remote_results_match_local_ones() {
    let client = Client::new(&spawn_service()).unwrap().with_poll_interval(Duration::from_millis(20));
    assert_eq!(client.health().unwrap()["status"], "ok");

    let d = stride();
    assert_eq!(client.power(&d).unwrap(), design::evaluate(&d, 86).unwrap());
    assert_eq!(client.samplesize(&d).unwrap(), design::required_clusters(&d).unwrap());

    let bad = DesignInputs::single(Estimand::WD, 0.5, 0.0, 0.0, 60.0, 0.0);
    match client.samplesize(&bad) {
        Err(ClientError::Api { status, body }) => {
            assert_eq!(status, 422);
            assert_eq!(body.kind, "infeasible");
        }
        other => panic!("expected an infeasibility error, got {other:?}"),
    }

    let spec = GenerativeSpec::Ordinal(OrdinalGenSpec {
        control_probs: vec![0.3, 0.4, 0.3],
        beta_effect: 0.5,
        sigma_b2: 0.2,
        q: 0.5,
        cluster_size: ClusterSize::Fixed { size: 20 },
        gh_nodes: 40,
    });
    let req = CalibrationRequest { spec: spec.clone(), options: EstimationOptions::default() };
    let remote = client.calibrate(&req, Duration::from_secs(60)).unwrap();
    assert_eq!(remote, estimate_design_inputs(&spec, &req.options).unwrap());

    match client.job("job-unknown") {
        Err(ClientError::Api { status: 404, .. }) => {}
        other => panic!("expected 404, got {other:?}"),
    }
}
