//! Attack experiments. Each returns a verdict; DEFENDED means the attack's
//! success predicate was false on every trial.

use std::collections::BTreeSet;

use chrono::{DateTime, Duration, NaiveDate, Utc};
use contact_core::proof::{contact_mac, ContactMac};
use contact_core::psi::{BloomFilter, PsiClientSession, QueryScope};
use contact_core::{CeTcn, DailyKey, ExposureCategory, Tcn};
use contact_server::api::ReleaseMode;
use contact_server::ServerConfig;
use contact_sim::{Broadcast, ReplayWindow};
use rand::seq::SliceRandom;
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::Serialize;

use crate::client::{decode_filters, direct_lists, ApiClient, Backend, Rejection};
use crate::device::{Device, Mode};
use crate::outcome::{ScenarioOutcome, Verdict};
use crate::world::{default_start, encounter, Actor};
use crate::HarnessError;

pub const ATTACKS: [&str; 4] = ["linkage", "rebroadcast", "foreign-upload", "self-report"];

fn medical_tan(backend: &Backend) -> Result<String, HarnessError> {
    Ok(backend
        .client
        .issue_tan(backend.credential())?
        .map_err(HarnessError::Rejected)?
        .tan)
}

/// Reports `device`'s keys under a medical TAN and seals the batch.
fn report_infected(backend: &Backend, device: &Device) -> Result<usize, HarnessError> {
    let tan = medical_tan(backend)?;
    let accepted = device
        .report(&backend.client, &tan, backend.server.now())?
        .map_err(HarnessError::Rejected)?;
    backend.server.seal_batch()?;
    Ok(accepted)
}

fn secs(s: i64) -> u64 {
    s as u64 * 1_000_000
}

// ---------------------------------------------------------------------------
// Rebroadcast

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ReplayTiming {
    /// Replayed in a later interval than it was captured in.
    CrossTin,
    /// Replayed within the interval it was captured in.
    SameTin,
    /// No replay: the relay advertises its own keys.
    Control,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct ReplayTrial {
    pub timing: ReplayTiming,
    pub recipient_notified: bool,
    /// The relay met the victim for real; it should be notified.
    pub relay_notified: bool,
    pub replay_offset_s: i64,
}

/// Victim and relay meet for two minutes from 10:00. The relay then
/// advertises the captured TCN to a recipient far from the victim for three
/// minutes, and the victim reports an hour later.
pub fn replay_trial(
    timing: ReplayTiming,
    mode: Mode,
    config: &ServerConfig,
    seed: u64,
) -> Result<ReplayTrial, HarnessError> {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let start = default_start();
    let mut victim = Device::new("victim", rng.gen());
    let mut relay = Device::new("relay", rng.gen());
    let mut recipient = Device::new("recipient", rng.gen());

    let capture = encounter(
        &mut [Actor::at(&mut victim, 0.0, 0.0), Actor::at(&mut relay, 1.0, 0.0)],
        start,
        secs(120),
        rng.gen(),
    )?;
    let captured = capture
        .sightings
        .iter()
        .find(|s| s.rx == 1 && s.tx == 0)
        .map(|s| s.tcn)
        .ok_or_else(|| HarnessError::Http("relay never heard the victim".into()))?;

    let offset_s = match timing {
        // Stays inside 10:00-10:10.
        ReplayTiming::SameTin => 180 + rng.gen_range(0..=240),
        ReplayTiming::CrossTin | ReplayTiming::Control => 600 * rng.gen_range(1..=3) + rng.gen_range(0..=400),
    };
    let replay_start = start + Duration::seconds(offset_s);
    let duration = secs(180);
    let relay_actor = Actor::at(&mut relay, 200.0, 0.0);
    let relay_actor = match timing {
        ReplayTiming::Control => relay_actor,
        _ => relay_actor.broadcasting(Broadcast::Replay(vec![ReplayWindow {
            from_us: 0,
            to_us: duration + 1,
            tcn: captured,
        }])),
    };
    encounter(&mut [relay_actor, Actor::at(&mut recipient, 201.0, 0.0)], replay_start, duration, rng.gen())?;

    let backend = Backend::start(config.clone(), start + Duration::hours(1))?;
    report_infected(&backend, &victim)?;
    let min_query = config.min_query;
    let recipient_notified = recipient.check(&backend.client, mode, min_query)?.first_total() > 0;
    let relay_notified = relay.check(&backend.client, mode, min_query)?.first_total() > 0;
    Ok(ReplayTrial { timing, recipient_notified, relay_notified, replay_offset_s: offset_s })
}

pub fn attack_rebroadcast(
    mode: Mode,
    trials: usize,
    seed: u64,
    config: &ServerConfig,
) -> Result<ScenarioOutcome, HarnessError> {
    let mut outcome = ScenarioOutcome::new("rebroadcast", Some(mode));
    outcome.trials = trials;
    outcome.required = Some(Verdict::Defended);
    let mut counts = [0usize; 3];
    let mut relay_notified = 0;
    for trial in 0..trials as u64 {
        for (i, timing) in [ReplayTiming::CrossTin, ReplayTiming::SameTin, ReplayTiming::Control].into_iter().enumerate() {
            let r = replay_trial(timing, mode, config, seed.wrapping_add(trial * 3 + i as u64))?;
            counts[i] += usize::from(r.recipient_notified);
            relay_notified += usize::from(r.relay_notified);
        }
    }
    outcome.verdict = if counts[0] == 0 { Verdict::Defended } else { Verdict::Vulnerable };
    outcome.metric("cross_tin_recipients_notified", counts[0]);
    outcome.metric("same_tin_recipients_notified", counts[1]);
    outcome.metric("control_recipients_notified", counts[2]);
    outcome.metric("relay_notified_of_real_contact", relay_notified);
    outcome.metric("relay_runs", trials * 3);
    Ok(outcome)
}

// ---------------------------------------------------------------------------
// Foreign upload

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct ForeignUploadTrial {
    pub raw_rejected: bool,
    pub fake_keys_accepted: usize,
    pub fake_key_notifications: usize,
    pub control_notified: bool,
}

fn fake_keys(today: NaiveDate, days: i64, rng: &mut ChaCha20Rng) -> Vec<DailyKey> {
    (0..days)
        .rev()
        .map(|back| DailyKey::generate(today - Duration::days(back), rng).expect("ChaCha never fails"))
        .collect()
}

/// Victim, witness and attacker spend six minutes together. The attacker
/// then tries to get the victim's observed TCNs marked infected, first as a
/// raw list and then behind keys of its own making.
pub fn foreign_upload_trial(mode: Mode, config: &ServerConfig, seed: u64) -> Result<ForeignUploadTrial, HarnessError> {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let start = default_start();
    let mut victim = Device::new("victim", rng.gen());
    let mut witness = Device::new("witness", rng.gen());
    let mut attacker = Device::new("attacker", rng.gen());
    let trace = encounter(
        &mut [
            Actor::at(&mut victim, 0.0, 0.0),
            Actor::at(&mut witness, 1.0, 0.0),
            Actor::at(&mut attacker, 0.0, 1.0),
        ],
        start,
        secs(360),
        rng.gen(),
    )?;
    let heard: BTreeSet<Tcn> = trace.sightings.iter().filter(|s| s.rx == 2 && s.tx == 0).map(|s| s.tcn).collect();

    let backend = Backend::start(config.clone(), start + Duration::hours(1))?;
    let tan = medical_tan(&backend)?;
    let raw = if seed % 2 == 0 {
        let tcns: Vec<String> = heard.iter().map(Tcn::to_hex).collect();
        serde_json::json!({ "tan": tan, "tcns": tcns })
    } else {
        let ces: Vec<String> = attacker.store.records().map(|r| r.ce_tcn.to_hex()).collect();
        serde_json::json!({ "tan": tan, "ce_tcns": ces })
    };
    let raw_rejected = matches!(
        backend.client.report_raw(&raw)?,
        Err(Rejection { status: 422, ref body }) if body.code == "keys_required"
    );

    // The rejected upload did not use up the TAN.
    let keys = fake_keys(backend.server.now().date_naive(), 14, &mut rng);
    let fake_keys_accepted = backend.client.report(&tan, &keys)?.map_err(HarnessError::Rejected)?;
    backend.server.seal_batch()?;
    let min_query = config.min_query;
    let mut fake_key_notifications = 0;
    for device in [&mut victim, &mut witness, &mut attacker] {
        let e = device.check(&backend.client, mode, min_query)?;
        fake_key_notifications += e.first_total() + e.second_total();
    }

    report_infected(&backend, &victim)?;
    let control_notified = witness.check(&backend.client, mode, min_query)?.first_total() > 0;
    Ok(ForeignUploadTrial { raw_rejected, fake_keys_accepted, fake_key_notifications, control_notified })
}

pub fn attack_foreign_upload(
    mode: Mode,
    trials: usize,
    seed: u64,
    config: &ServerConfig,
) -> Result<ScenarioOutcome, HarnessError> {
    let mut outcome = ScenarioOutcome::new("foreign-upload", Some(mode));
    outcome.trials = trials;
    outcome.required = Some(Verdict::Defended);
    let (mut rejected, mut fake_notes, mut controls, mut accepted) = (0, 0, 0, 0);
    for trial in 0..trials as u64 {
        let t = foreign_upload_trial(mode, config, seed.wrapping_add(trial))?;
        rejected += usize::from(t.raw_rejected);
        fake_notes += t.fake_key_notifications;
        controls += usize::from(t.control_notified);
        accepted += t.fake_keys_accepted;
    }
    outcome.verdict =
        if rejected == trials && fake_notes == 0 { Verdict::Defended } else { Verdict::Vulnerable };
    outcome.metric("raw_uploads_rejected", rejected);
    outcome.metric("fake_key_ce_tcns_accepted", accepted);
    outcome.metric("fake_key_notifications", fake_notes);
    outcome.metric("control_witness_notified", controls);
    Ok(outcome)
}

// ---------------------------------------------------------------------------
// Self report

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct SelfReportResult {
    pub no_tan_attempts: usize,
    pub no_tan_rejected: usize,
    pub forged_guesses: usize,
    pub forged_accepted: usize,
    pub empty_proof_rejected: bool,
    pub control_second_order_tan: bool,
    pub control_report_accepted: usize,
    pub nonce_replay_rejected: bool,
}

/// An attacker who met nobody tries to upload without a TAN and to forge a
/// proof of contact; a genuinely exposed node takes the legitimate path.
pub fn self_report_run(
    challenges: usize,
    macs_per_challenge: usize,
    config: &ServerConfig,
    seed: u64,
) -> Result<SelfReportResult, HarnessError> {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let start = default_start();
    let mut infected = Device::new("infected", rng.gen());
    let mut exposed = Device::new("exposed", rng.gen());
    let mut attacker = Device::new("attacker", rng.gen());
    encounter(
        &mut [Actor::at(&mut infected, 0.0, 0.0), Actor::at(&mut exposed, 1.0, 0.0)],
        start,
        secs(600),
        rng.gen(),
    )?;
    attacker.ensure_keys(start.date_naive(), start.date_naive())?;

    let backend = Backend::start(config.clone(), start + Duration::hours(1))?;
    report_infected(&backend, &infected)?;
    let now = backend.server.now();
    let client = &backend.client;

    let alphabet = b"ABCDEFGHJKLMNPQRSTUVWXYZ23456789";
    let guessed: String = (0..12).map(|_| alphabet[rng.gen_range(0..alphabet.len())] as char).collect();
    let keys = attacker.store.prepare_report(attacker.retention, now)?.keys;
    let key_json: Vec<_> = keys
        .iter()
        .map(|k| serde_json::json!({ "date": k.date(), "key_hex": hex::encode(k.bytes()) }))
        .collect();
    let attempts = [
        client.report("", &keys)?,
        client.report(&guessed, &keys)?,
        client.report_raw(&serde_json::json!({ "keys": key_json }))?,
    ];
    let no_tan_rejected = attempts.iter().filter(|a| a.is_err()).count();

    let mut forged_accepted = 0;
    for _ in 0..challenges {
        let nonce = client.proof_challenge()?;
        let macs: Vec<ContactMac> = (0..macs_per_challenge)
            .map(|_| {
                let mut m = [0u8; 32];
                rng.fill_bytes(&mut m);
                m
            })
            .collect();
        forged_accepted += usize::from(client.proof_response(&nonce, &macs)?.is_ok());
    }
    let empty_proof_rejected = attacker.prove_contact(client)?.is_err();

    let min_query = config.min_query;
    exposed.check(client, Mode::Direct, min_query)?;
    let nonce = client.proof_challenge()?;
    let macs: Vec<ContactMac> = exposed.contacts().iter().map(|(ce, _)| contact_mac(ce, &nonce)).collect();
    let granted = client.proof_response(&nonce, &macs)?;
    let nonce_replay_rejected = client.proof_response(&nonce, &macs)?.is_err();
    let (control_second_order_tan, control_report_accepted) = match granted {
        Ok(tan) => {
            let second = tan.kind == contact_server::TanKind::SecondOrder;
            (second, exposed.report(client, &tan.tan, now)?.unwrap_or(0))
        }
        Err(_) => (false, 0),
    };
    Ok(SelfReportResult {
        no_tan_attempts: attempts.len(),
        no_tan_rejected,
        forged_guesses: challenges * macs_per_challenge,
        forged_accepted,
        empty_proof_rejected,
        control_second_order_tan,
        control_report_accepted,
        nonce_replay_rejected,
    })
}

pub fn attack_self_report(
    challenges: usize,
    macs_per_challenge: usize,
    seed: u64,
    config: &ServerConfig,
) -> Result<ScenarioOutcome, HarnessError> {
    let r = self_report_run(challenges, macs_per_challenge, config, seed)?;
    let mut outcome = ScenarioOutcome::new("self-report", None);
    outcome.trials = 1;
    outcome.required = Some(Verdict::Defended);
    let defended = r.no_tan_rejected == r.no_tan_attempts
        && r.forged_accepted == 0
        && r.empty_proof_rejected
        && r.nonce_replay_rejected;
    outcome.verdict = if defended { Verdict::Defended } else { Verdict::Vulnerable };
    outcome.metric("no_tan_rejected", format!("{}/{}", r.no_tan_rejected, r.no_tan_attempts));
    outcome.metric("forged_guesses", r.forged_guesses);
    outcome.metric("forged_accepted", r.forged_accepted);
    outcome.metric("empty_proof_rejected", r.empty_proof_rejected);
    outcome.metric("nonce_replay_rejected", r.nonce_replay_rejected);
    outcome.metric("control_second_order_tan", r.control_second_order_tan);
    outcome.metric("control_report_accepted", r.control_report_accepted);
    Ok(outcome)
}

// ---------------------------------------------------------------------------
// Linkage

/// A static sniffer next to a camera. Every 30 s one passer-by walks past
/// and is heard for up to 92 s; the camera notes who passed when.
pub struct LinkageSetup {
    pub attacker: Device,
    pub passers: Vec<Device>,
    pub camera: Vec<(DateTime<Utc>, usize)>,
    pub infected: usize,
    pub start: DateTime<Utc>,
}

const PASS_SPACING_S: i64 = 30;

pub fn linkage_setup(logged: usize, seed: u64) -> Result<LinkageSetup, HarnessError> {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let start = default_start() - Duration::hours(2);
    let mut attacker = Device::new("attacker", rng.gen());
    let mut passers = Vec::with_capacity(logged);
    let mut camera = Vec::with_capacity(logged);
    for i in 0..logged {
        let mut p = Device::new(format!("p{i}"), rng.gen());
        let passed = start + Duration::seconds(PASS_SPACING_S * i as i64);
        p.ensure_keys(passed.date_naive(), passed.date_naive())?;
        for k in 0..24 {
            let at = passed + Duration::seconds(4 * k);
            // Cut at the interval boundary so each passer leaves one ceTCN.
            if contact_core::Tin::of(at) != contact_core::Tin::of(passed) {
                break;
            }
            let tcn = p.tcn_at(at).expect("key for the day");
            attacker.ingest(&tcn, at, -60 - rng.gen_range(0..10))?;
        }
        camera.push((passed, i));
        passers.push(p);
    }
    let infected = rng.gen_range(0..logged);
    Ok(LinkageSetup { attacker, passers, camera, infected, start })
}

impl LinkageSetup {
    /// Who the camera saw when this ceTCN was first logged.
    pub fn identify(&self, ce: &CeTcn) -> Option<usize> {
        let seen = self.attacker.store.record(ce)?.first_seen;
        self.camera.iter().rev().find(|(t, _)| *t <= seen).map(|(_, who)| *who)
    }

    pub fn logged(&self) -> Vec<CeTcn> {
        self.attacker.store.records().map(|r| r.ce_tcn).collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LinkageTrial {
    pub logged: usize,
    pub infected: usize,
    pub identified: Option<usize>,
    /// The success predicate behind the verdict.
    pub succeeded: bool,
    pub undersized_query_rejected: Option<bool>,
    pub sessions_answered: usize,
    pub sessions_refused: usize,
    pub identification_probability: f64,
    pub adaptive: Option<AdaptiveAttack>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AdaptiveAttack {
    pub sessions: usize,
    pub identified: Option<usize>,
    pub correct: bool,
}

fn psi_filters(client: &ApiClient) -> Result<(Vec<u64>, Vec<BloomFilter>), HarnessError> {
    let released = client.batches(0, ReleaseMode::Psi)?;
    let decoded = released.batches.iter().map(decode_filters).collect::<Result<Vec<_>, _>>()?;
    Ok((decoded.iter().map(|f| f.batch_id).collect(), decoded.into_iter().map(|f| f.first_order).collect()))
}

/// Runs one grouped session; hits per group, summed over batches. `None`
/// when the server refused the session.
fn grouped_hits(
    client: &ApiClient,
    token: &str,
    groups: &[(QueryScope, Vec<CeTcn>)],
    min_query: usize,
    batches: &(Vec<u64>, Vec<BloomFilter>),
    rng: &mut ChaCha20Rng,
) -> Result<Result<Vec<usize>, Rejection>, HarnessError> {
    let mut session = PsiClientSession::new(rng);
    let query = session.round1_grouped(groups, min_query, rng)?;
    let replies = match client.psi_round1(token, &batches.0, &query)? {
        Ok(r) => r,
        Err(rej) => return Ok(Err(rej)),
    };
    let messages: Vec<_> = replies.into_iter().map(|(_, m)| m).collect();
    let stripped = session.strip_replies(&messages)?;
    let mut hits = vec![0; groups.len()];
    for (s, filter) in stripped.iter().zip(&batches.1) {
        for (i, g) in s.tally(filter).groups.iter().enumerate() {
            hits[i] += g.hits;
        }
    }
    Ok(Ok(hits))
}

const GROUP_LABELS: [QueryScope; 3] = [
    QueryScope::Category(ExposureCategory::High),
    QueryScope::Category(ExposureCategory::Medium),
    QueryScope::Category(ExposureCategory::Low),
];

/// Ternary search with padded groups: each session splits the remaining
/// candidates three ways and keeps the group that hit.
fn adaptive_search(
    setup: &LinkageSetup,
    client: &ApiClient,
    token: &str,
    min_query: usize,
    batches: &(Vec<u64>, Vec<BloomFilter>),
    rng: &mut ChaCha20Rng,
) -> Result<AdaptiveAttack, HarnessError> {
    let mut candidates = setup.logged();
    let mut sessions = 0;
    while candidates.len() > 1 {
        let chunk = candidates.len().div_ceil(3);
        let groups: Vec<_> = candidates.chunks(chunk).zip(GROUP_LABELS).map(|(c, l)| (l, c.to_vec())).collect();
        let Ok(hits) = grouped_hits(client, token, &groups, min_query, batches, rng)? else {
            break;
        };
        sessions += 1;
        match hits.iter().position(|h| *h > 0) {
            Some(i) => candidates = groups[i].1.clone(),
            None => {
                candidates.clear();
                break;
            }
        }
    }
    let identified = match candidates.as_slice() {
        [only] => setup.identify(only),
        _ => None,
    };
    Ok(AdaptiveAttack { sessions, identified, correct: identified == Some(setup.infected) })
}

pub fn linkage_trial(
    mode: Mode,
    logged: usize,
    config: &ServerConfig,
    seed: u64,
    adaptive: bool,
) -> Result<LinkageTrial, HarnessError> {
    let setup = linkage_setup(logged, seed)?;
    let mut rng = ChaCha20Rng::seed_from_u64(seed ^ 0x5eed);
    let backend = Backend::start(config.clone(), setup.start + Duration::hours(10))?;
    report_infected(&backend, &setup.passers[setup.infected])?;
    let client = &backend.client;

    let mut trial = LinkageTrial {
        logged,
        infected: setup.infected,
        identified: None,
        succeeded: false,
        undersized_query_rejected: None,
        sessions_answered: 0,
        sessions_refused: 0,
        identification_probability: 0.0,
        adaptive: None,
    };
    match mode {
        Mode::Direct => {
            let released = client.batches(0, ReleaseMode::Direct)?;
            let matches: Vec<usize> = setup
                .logged()
                .iter()
                .filter(|ce| released.batches.iter().any(|b| direct_lists(b).0.binary_search(ce).is_ok()))
                .filter_map(|ce| setup.identify(ce))
                .collect();
            if let [who] = matches.as_slice() {
                trial.identified = Some(*who);
            }
            trial.succeeded = trial.identified == Some(setup.infected);
            trial.identification_probability = if trial.succeeded { 1.0 } else { 0.0 };
        }
        Mode::Psi => {
            let min_query = config.min_query;
            let limit = config.rate_limit.sessions as usize;
            let batches = psi_filters(client)?;
            let mut order = setup.logged();
            order.shuffle(&mut rng);
            let token = "attacker";

            // A bare single-element query.
            let mut session = PsiClientSession::new(&mut rng);
            let bare = session.round1(&order[..1], 1, &mut rng)?;
            let undersized = client.psi_round1(token, &batches.0, &bare)?;
            trial.undersized_query_rejected = Some(undersized.is_err());

            // One candidate per session, padded to the minimum. Stop at the
            // first refusal or one session past the limit.
            for ce in order.iter().take(limit + 1) {
                let groups = [(QueryScope::AllContacts, vec![*ce])];
                match grouped_hits(client, token, &groups, min_query, &batches, &mut rng)? {
                    Ok(hits) => {
                        trial.sessions_answered += 1;
                        if hits[0] > 0 {
                            trial.identified = setup.identify(ce);
                        }
                    }
                    Err(_) => {
                        trial.sessions_refused += 1;
                        break;
                    }
                }
            }
            trial.identification_probability = trial.sessions_answered as f64 / logged as f64;
            trial.succeeded = undersized.is_ok() || trial.sessions_answered > limit;
            if adaptive {
                let fresh = format!("attacker-sybil-{seed}");
                trial.adaptive = Some(adaptive_search(&setup, client, &fresh, min_query, &batches, &mut rng)?);
            }
        }
    }
    Ok(trial)
}

/// Linkage attack. In PSI mode the verdict rests on the counting model:
/// the attacker may test one logged TCN per session, so a run succeeds only
/// if an undersized query is answered or a session past the daily limit is.
/// The adaptive group-testing attacker is reported next to it.
pub fn attack_linkage(
    mode: Mode,
    logged: usize,
    trials: usize,
    seed: u64,
    config: &ServerConfig,
) -> Result<ScenarioOutcome, HarnessError> {
    let mut outcome = ScenarioOutcome::new("linkage", Some(mode));
    outcome.trials = trials;
    outcome.required = match (mode, config.rate_limit_enabled) {
        (Mode::Direct, _) => Some(Verdict::Vulnerable),
        (Mode::Psi, true) => Some(Verdict::Defended),
        (Mode::Psi, false) => None,
    };
    let mut runs = Vec::with_capacity(trials);
    for trial in 0..trials as u64 {
        runs.push(linkage_trial(mode, logged, config, seed.wrapping_add(trial), true)?);
    }
    let any_success = runs.iter().any(|r| r.succeeded);
    outcome.verdict = if any_success { Verdict::Vulnerable } else { Verdict::Defended };
    let best = runs.iter().map(|r| r.identification_probability).fold(0.0, f64::max);
    outcome.metric("logged_tcns", logged);
    outcome.metric("successful_trials", runs.iter().filter(|r| r.succeeded).count());
    outcome.metric("best_identification_probability", best);
    if mode == Mode::Psi {
        let bound = config.rate_limit.sessions as f64 * config.min_query as f64 / logged as f64;
        outcome.metric("rate_limit_enabled", config.rate_limit_enabled);
        outcome.metric("identification_bound", bound);
        outcome.metric("within_bound", best <= bound);
        outcome.metric("undersized_queries_rejected", runs.iter().all(|r| r.undersized_query_rejected == Some(true)));
        outcome.metric("max_sessions_answered", runs.iter().map(|r| r.sessions_answered).max().unwrap_or(0));
        let adaptive: Vec<_> = runs.iter().filter_map(|r| r.adaptive.as_ref()).collect();
        outcome.metric("adaptive_sessions", adaptive.iter().map(|a| a.sessions).collect::<Vec<_>>());
        outcome.metric("adaptive_identified_correctly", adaptive.iter().filter(|a| a.correct).count());
    }
    outcome.metric("trials", runs);
    Ok(outcome)
}
