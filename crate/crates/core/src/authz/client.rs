//! Subject side of the protocol over HTTP.

use std::time::Duration;

use ureq::Agent;

use super::server::{AuthorizeReply, AuthorizeRequest, DecisionKind};
use super::{AuthorizationResponse, AuthzError, Challenge};
use crate::credential::{collect, Collection, Credential};
use crate::discovery::Limits;
use crate::keys::NamespaceKey;
use crate::netsim::NameSystemBackend;
use crate::time::Timestamp;

pub struct Client {
    agent: Agent,
    endpoint: String,
}

/// What a request produced: the verifier's reply and what was sent.
#[derive(Debug, Clone)]
pub struct AccessOutcome {
    pub reply: AuthorizeReply,
    pub collection: Collection,
}

impl AccessOutcome {
    pub fn granted(&self) -> bool {
        self.reply.decision == DecisionKind::Grant
    }
}

impl Client {
    pub fn new(endpoint: &str) -> Self {
        let agent: Agent = Agent::config_builder()
            .http_status_as_error(false)
            .timeout_global(Some(Duration::from_secs(30)))
            .build()
            .into();
        Client {
            agent,
            endpoint: endpoint.trim_end_matches('/').to_owned(),
        }
    }

    pub fn endpoint(&self) -> &str {
        &self.endpoint
    }

    pub fn get_policy(&self, resource_id: &str) -> Result<Challenge, AuthzError> {
        let url = format!("{}/policy/{}", self.endpoint, resource_id);
        let mut resp = self
            .agent
            .get(&url)
            .call()
            .map_err(|e| AuthzError::Transport(e.to_string()))?;
        let status = resp.status();
        if status.as_u16() == 404 {
            return Err(AuthzError::UnknownResource(resource_id.to_owned()));
        }
        if !status.is_success() {
            return Err(AuthzError::Protocol(format!(
                "policy request answered {status}"
            )));
        }
        resp.body_mut()
            .read_json()
            .map_err(|e| AuthzError::Protocol(e.to_string()))
    }

    /// Submits a response. 503 replies come back as `Ok` with decision `error`.
    pub fn submit(
        &self,
        resource_id: &str,
        response: AuthorizationResponse,
    ) -> Result<AuthorizeReply, AuthzError> {
        let url = format!("{}/authorize", self.endpoint);
        let body = AuthorizeRequest {
            resource_id: resource_id.to_owned(),
            response,
        };
        let mut resp = self
            .agent
            .post(&url)
            .send_json(&body)
            .map_err(|e| AuthzError::Transport(e.to_string()))?;
        let status = resp.status();
        resp.body_mut()
            .read_json::<AuthorizeReply>()
            .map_err(|e| AuthzError::Protocol(format!("{status}: {e}")))
    }
}

/// The full round trip: fetch policy and nonce, collect credentials
/// against the subject's own view of the name system, sign, submit.
pub fn request_access(
    client: &Client,
    resource_id: &str,
    subject: &NamespaceKey,
    subject_creds: &[Credential],
    backend: &mut dyn NameSystemBackend,
    clock: Timestamp,
    limits: &Limits,
) -> Result<AccessOutcome, AuthzError> {
    let challenge = client.get_policy(resource_id)?;
    let collection = collect(
        subject_creds,
        &subject.public_key(),
        &challenge.verifier,
        &challenge.policy.attributes,
        backend,
        clock,
        limits,
    )?;
    let response =
        AuthorizationResponse::sign(subject, challenge.nonce, collection.per_attribute.clone())?;
    let reply = client.submit(resource_id, response)?;
    Ok(AccessOutcome { reply, collection })
}
