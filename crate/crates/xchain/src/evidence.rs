//! Cross-chain evidence: header chains from a recorded stable anchor that
//! prove a transaction's effect on a foreign chain. A validator checks the
//! hash links from its stored anchor, the proof of work of every header, the
//! target transaction's inclusion via the payload digest, and that the
//! target sits at least `d` headers below the evidence tip — all without any
//! access to the foreign chain itself.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::chain_sim::{
    contract_id_for, meets_difficulty, payload_digest, BlockHeader, ChainTx, Confirmations,
    ContractId, SimChain, TxId, TxPayload,
};
use crate::codec::{Canonical, Encoder};
use crate::contracts::{CallPayload, DeployCode, WitnessContract, WitnessState};
use crate::crypto::{Digest, PublicKey};
use crate::swap_graph::ChainId;

/// A stable block header of a validated chain, recorded by a validator at
/// registration time.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnchorHeader {
    pub chain_id: ChainId,
    pub header: BlockHeader,
}

impl Canonical for AnchorHeader {
    fn encode(&self, enc: &mut Encoder) {
        enc.value(&self.chain_id).value(&self.header);
    }
}

/// Anchor plus the validated chain's difficulty, the full configuration a
/// validator contract stores about a foreign chain.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnchorInfo {
    pub anchor: AnchorHeader,
    pub pow_difficulty: u32,
}

impl Canonical for AnchorInfo {
    fn encode(&self, enc: &mut Encoder) {
        enc.value(&self.anchor).u32(self.pow_difficulty);
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum EvidenceError {
    #[error("chain shorter than the requested anchor depth")]
    ChainTooShort,
    #[error("target transaction not yet buried deep enough")]
    NotStableYet,
    #[error("target transaction is not on the canonical chain")]
    NotCanonical,
    #[error("target transaction is at or below the anchor")]
    BelowAnchor,
    #[error("transaction kind cannot be proven as an effect")]
    UnsupportedTarget,
}

/// Scheme identity as compared across chains: enough to pin which lock a
/// contract carries without replaying anchor bookkeeping.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SchemeDescriptor {
    TrustedWitness {
        graph_digest: Digest,
        witness_pk: PublicKey,
    },
    WitnessRef {
        witness_chain: ChainId,
        witness_contract: ContractId,
        min_depth: u64,
    },
    HashLock {
        lock: Digest,
    },
}

impl Canonical for SchemeDescriptor {
    fn encode(&self, enc: &mut Encoder) {
        match self {
            SchemeDescriptor::TrustedWitness {
                graph_digest,
                witness_pk,
            } => {
                enc.tag(0x01).value(graph_digest).value(witness_pk);
            }
            SchemeDescriptor::WitnessRef {
                witness_chain,
                witness_contract,
                min_depth,
            } => {
                enc.tag(0x02)
                    .value(witness_chain)
                    .value(witness_contract)
                    .u64(*min_depth);
            }
            SchemeDescriptor::HashLock { lock } => {
                enc.tag(0x03).value(lock);
            }
        }
    }
}

/// The effect an evidence target claims: a swap-contract deployment with
/// specific fields, or a witness-contract state update.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EffectClaim {
    ContractDeploy {
        contract: ContractId,
        sender: PublicKey,
        recipient: PublicKey,
        amount: u64,
        rd: SchemeDescriptor,
        rf: SchemeDescriptor,
    },
    WitnessUpdate {
        contract: ContractId,
        state: WitnessState,
    },
}

impl Canonical for EffectClaim {
    fn encode(&self, enc: &mut Encoder) {
        match self {
            EffectClaim::ContractDeploy {
                contract,
                sender,
                recipient,
                amount,
                rd,
                rf,
            } => {
                enc.tag(0x01)
                    .value(contract)
                    .value(sender)
                    .value(recipient)
                    .u64(*amount)
                    .value(rd)
                    .value(rf);
            }
            EffectClaim::WitnessUpdate { contract, state } => {
                enc.tag(0x02).value(contract).value(state);
            }
        }
    }
}

/// A header chain starting right above an anchor and ending at the builder's
/// view of the tip, plus the target block's full transaction list so the
/// validator can recompute the payload digest.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Evidence {
    pub chain_id: ChainId,
    pub headers: Vec<BlockHeader>,
    pub target_index: u64,
    pub target_txs: Vec<ChainTx>,
    pub target_tx: TxId,
    pub claim: EffectClaim,
}

impl Canonical for Evidence {
    fn encode(&self, enc: &mut Encoder) {
        enc.value(&self.chain_id);
        enc.seq(&self.headers);
        enc.u64(self.target_index);
        enc.seq(&self.target_txs);
        enc.value(&self.target_tx);
        enc.value(&self.claim);
    }
}

/// One evidence item per edge of a swap graph, keyed by the edge's index in
/// canonical order.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvidenceBundle {
    pub per_edge: BTreeMap<u64, Evidence>,
}

impl Canonical for EvidenceBundle {
    fn encode(&self, enc: &mut Encoder) {
        enc.u64(self.per_edge.len() as u64);
        for (idx, e) in &self.per_edge {
            enc.u64(*idx).value(e);
        }
    }
}

/// Header at depth exactly `d` below the canonical tip.
pub fn record_anchor(chain: &SimChain, d: u64) -> Result<AnchorHeader, EvidenceError> {
    let tip_height = chain.tip_height();
    if tip_height < d {
        return Err(EvidenceError::ChainTooShort);
    }
    let path = chain.canonical_path();
    let header = chain
        .block(&path[(tip_height - d) as usize])
        .expect("path blocks exist")
        .header
        .clone();
    Ok(AnchorHeader {
        chain_id: chain.chain_id().clone(),
        header,
    })
}

/// Anchor plus the chain's difficulty, as a validator contract records it.
pub fn record_anchor_info(chain: &SimChain, d: u64) -> Result<AnchorInfo, EvidenceError> {
    Ok(AnchorInfo {
        anchor: record_anchor(chain, d)?,
        pow_difficulty: chain.params().pow_difficulty,
    })
}

fn claim_for_tx(tx: &ChainTx) -> Result<EffectClaim, EvidenceError> {
    match &tx.payload {
        TxPayload::ContractDeploy { deploy, code } => match code {
            DeployCode::Swap { recipient, rd, rf } => Ok(EffectClaim::ContractDeploy {
                contract: contract_id_for(tx.tx_id),
                sender: deploy.sender,
                recipient: *recipient,
                amount: deploy.value,
                rd: rd.descriptor(),
                rf: rf.descriptor(),
            }),
            _ => Err(EvidenceError::UnsupportedTarget),
        },
        TxPayload::ContractCall { contract, call } => match call {
            CallPayload::AuthorizeRedeem { .. } => Ok(EffectClaim::WitnessUpdate {
                contract: *contract,
                state: WitnessState::RedeemAuthorized,
            }),
            CallPayload::AuthorizeRefund => Ok(EffectClaim::WitnessUpdate {
                contract: *contract,
                state: WitnessState::RefundAuthorized,
            }),
            _ => Err(EvidenceError::UnsupportedTarget),
        },
        TxPayload::AssetTransfer { .. } => Err(EvidenceError::UnsupportedTarget),
    }
}

/// Build the minimal valid evidence for a canonical transaction that has at
/// least `d` confirmations: headers from just above `anchor` through the
/// canonical tip.
pub fn build_evidence(
    chain: &SimChain,
    anchor: &AnchorHeader,
    tx_ref: &TxId,
    d: u64,
) -> Result<Evidence, EvidenceError> {
    let (block_digest, block_height) = chain
        .find_tx_on_canon(tx_ref)
        .ok_or(EvidenceError::NotCanonical)?;
    match chain.confirmations(&block_digest) {
        Ok(Confirmations::OnCanon(c)) if c >= d => {}
        Ok(Confirmations::OnCanon(_)) => return Err(EvidenceError::NotStableYet),
        _ => return Err(EvidenceError::NotCanonical),
    }
    let anchor_height = anchor.header.height;
    if block_height <= anchor_height {
        return Err(EvidenceError::BelowAnchor);
    }
    let headers = chain.canonical_headers();
    let above_anchor: Vec<BlockHeader> = headers
        .into_iter()
        .filter(|h| h.height > anchor_height)
        .collect();
    let target_index = block_height - anchor_height - 1;
    let block = chain.block(&block_digest).expect("canonical block exists");
    let tx = block
        .txs
        .iter()
        .find(|t| t.tx_id == *tx_ref)
        .expect("target tx in its block");
    Ok(Evidence {
        chain_id: chain.chain_id().clone(),
        headers: above_anchor,
        target_index,
        target_txs: block.txs.clone(),
        target_tx: *tx_ref,
        claim: claim_for_tx(tx)?,
    })
}

fn effect_matches(tx: &ChainTx, expected: &EffectClaim) -> bool {
    match (&tx.payload, expected) {
        (
            TxPayload::ContractDeploy { deploy, code },
            EffectClaim::ContractDeploy {
                contract,
                sender,
                recipient,
                amount,
                rd,
                rf,
            },
        ) => {
            let DeployCode::Swap {
                recipient: code_recipient,
                rd: code_rd,
                rf: code_rf,
            } = code
            else {
                return false;
            };
            contract_id_for(tx.tx_id) == *contract
                && deploy.sender == *sender
                && deploy.value == *amount
                && code_recipient == recipient
                && code_rd.descriptor() == *rd
                && code_rf.descriptor() == *rf
        }
        (
            TxPayload::ContractCall { contract, call },
            EffectClaim::WitnessUpdate {
                contract: expected_contract,
                state,
            },
        ) => {
            contract == expected_contract
                && match (call, state) {
                    (CallPayload::AuthorizeRedeem { .. }, WitnessState::RedeemAuthorized) => true,
                    (CallPayload::AuthorizeRefund, WitnessState::RefundAuthorized) => true,
                    _ => false,
                }
        }
        _ => false,
    }
}

/// Validate possibly adversarial evidence against a stored anchor. True iff
/// the link chain holds from the anchor, every header passes the difficulty
/// predicate, the target transaction is included in the claimed block, that
/// block is buried under at least `d` of the evidence's own headers, and the
/// transaction's effect is exactly `expected`.
pub fn validate_evidence(
    anchor: &AnchorHeader,
    pow_difficulty: u32,
    e: &Evidence,
    d: u64,
    expected: &EffectClaim,
) -> bool {
    if e.chain_id != anchor.chain_id || e.claim != *expected {
        return false;
    }
    if e.headers.is_empty() {
        return false;
    }
    // Link chain from the anchor, consecutive heights, proof of work.
    let mut prev_digest = anchor.header.digest();
    let mut prev_height = anchor.header.height;
    for h in &e.headers {
        if h.prev_digest != prev_digest || h.height != prev_height + 1 {
            return false;
        }
        let digest = h.digest();
        if !meets_difficulty(&digest, pow_difficulty) {
            return false;
        }
        prev_digest = digest;
        prev_height = h.height;
    }
    let Ok(target_index) = usize::try_from(e.target_index) else {
        return false;
    };
    if target_index >= e.headers.len() {
        return false;
    }
    // Burial depth within the evidence itself.
    if (e.headers.len() - 1 - target_index) as u64 < d {
        return false;
    }
    // Inclusion: the carried transaction list is the claimed block's payload
    // and contains the target with a self-consistent id.
    if payload_digest(&e.target_txs) != e.headers[target_index].payload_digest {
        return false;
    }
    let Some(tx) = e.target_txs.iter().find(|t| t.tx_id == e.target_tx) else {
        return false;
    };
    if !tx.id_consistent() {
        return false;
    }
    effect_matches(tx, expected)
}

/// The coordinator-side check: every edge of the registered graph has valid
/// evidence of a deployed contract whose sender, recipient, amount, and
/// chain match the edge, and whose redemption and refund locks both point at
/// this coordinator at the registered depth.
pub fn verify_contracts(
    sc_w_id: &ContractId,
    sc_w: &WitnessContract,
    bundle: &EvidenceBundle,
) -> bool {
    let edges = sc_w.graph.edges();
    if bundle.per_edge.len() != edges.len() {
        return false;
    }
    let mut seen_contracts = BTreeSet::new();
    for (idx, edge) in edges.iter().enumerate() {
        let Some(e) = bundle.per_edge.get(&(idx as u64)) else {
            return false;
        };
        if e.chain_id != edge.chain_id {
            return false;
        }
        let Some(anchor_info) = sc_w.anchors.get(&edge.chain_id) else {
            return false;
        };
        let (Some(sender_pk), Some(recipient_pk)) = (
            sc_w.participants.get(&edge.source),
            sc_w.participants.get(&edge.recipient),
        ) else {
            return false;
        };
        let EffectClaim::ContractDeploy { contract, .. } = &e.claim else {
            return false;
        };
        if !seen_contracts.insert(*contract) {
            return false; // one deposit cannot back two edges
        }
        let scheme = SchemeDescriptor::WitnessRef {
            witness_chain: sc_w.chain_id.clone(),
            witness_contract: *sc_w_id,
            min_depth: sc_w.confirm_depth,
        };
        let expected = EffectClaim::ContractDeploy {
            contract: *contract,
            sender: *sender_pk,
            recipient: *recipient_pk,
            amount: edge.amount,
            rd: scheme.clone(),
            rf: scheme,
        };
        if !validate_evidence(
            &anchor_info.anchor,
            anchor_info.pow_difficulty,
            e,
            sc_w.confirm_depth,
            &expected,
        ) {
            return false;
        }
    }
    true
}
