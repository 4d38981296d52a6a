use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{sample_size, FederationError, FederationHistory};

/// Bytes per decimal megabyte.
pub const BYTES_PER_MB: f64 = 1e6;

pub fn bytes_to_mb(bytes: u64) -> f64 {
    bytes as f64 / BYTES_PER_MB
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClientTraffic {
    pub uplink: u64,
    pub downlink: u64,
    pub rounds: u64,
}

/// Weight-exchange traffic. Every participant downloads the global model
/// and uploads its local one once per round it is sampled in.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CommunicationLedger {
    pub payload_bytes: u64,
    pub per_client: BTreeMap<String, ClientTraffic>,
    /// Bytes the server received (equal to the bytes it sent).
    pub server_received: u64,
    pub server_sent: u64,
    pub rounds: usize,
}

impl CommunicationLedger {
    pub fn new(payload_bytes: u64) -> Self {
        Self { payload_bytes, ..Default::default() }
    }

    /// Bills one round in which `participants` exchanged weights.
    pub fn record_round<S: AsRef<str>>(&mut self, participants: &[S]) {
        for id in participants {
            let t = self.per_client.entry(id.as_ref().to_string()).or_default();
            t.uplink += self.payload_bytes;
            t.downlink += self.payload_bytes;
            t.rounds += 1;
        }
        let k = participants.len() as u64;
        self.server_received += self.payload_bytes * k;
        self.server_sent += self.payload_bytes * k;
        self.rounds += 1;
    }

    pub fn client_one_directional(&self, id: &str) -> u64 {
        self.per_client.get(id).map_or(0, |t| t.uplink)
    }

    pub fn server_one_directional(&self) -> u64 {
        self.server_received
    }

    /// Both directions, all participants.
    pub fn total_bytes(&self) -> u64 {
        self.server_received + self.server_sent
    }
}

/// Ledger for an explicit participation schedule, one entry per round.
pub fn account_schedule<S: AsRef<str>>(payload_bytes: u64, schedule: &[Vec<S>]) -> CommunicationLedger {
    let mut ledger = CommunicationLedger::new(payload_bytes);
    for round in schedule {
        ledger.record_round(round);
    }
    ledger
}

/// Ledger for the first `upto_round` rounds of a recorded history.
pub fn account_communication(
    payload_bytes: u64,
    history: &FederationHistory,
    upto_round: usize,
) -> Result<CommunicationLedger, FederationError> {
    if upto_round > history.rounds.len() {
        return Err(FederationError::RoundOutOfRange { requested: upto_round, recorded: history.rounds.len() });
    }
    let schedule: Vec<Vec<&str>> = history.rounds[..upto_round]
        .iter()
        .map(|r| r.sampled.iter().map(String::as_str).collect())
        .collect();
    Ok(account_schedule(payload_bytes, &schedule))
}

/// Both-direction bytes for `rounds` rounds of sampling fraction `f` over
/// `n_clients`, using the sampling size rule.
pub fn projected_total_bytes(payload_bytes: u64, n_clients: usize, f: f64, rounds: usize) -> Result<u64, FederationError> {
    let k = sample_size(n_clients, f)? as u64;
    Ok(2 * payload_bytes * k * rounds as u64)
}
