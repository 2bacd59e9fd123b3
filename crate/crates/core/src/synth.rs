//! Bundled synthetic corpora for desk-scale runs.
//!
//! Log records are three to four levels deep and almost every value is a
//! deterministic function of three hidden seeds: the event, the user, and
//! the identity type. Early fields (the event name) fix late fields (the
//! response block), with a filler subtree in between, so those couplings
//! span flat-attention windows while each stays local to some segment and
//! the summary chain. Uncoupled values draw from pools of at most eight
//! tokens. Mismatching any leaf therefore leaves a wide, detectable trail.
//!
//! The co-purchase generator emits item records whose field values come
//! from per-category pools, plus user purchase histories concentrated on
//! one preferred category.

use std::fmt::Write as _;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::detection::recommend::UserHistory;

#[derive(Debug, Clone)]
pub struct LogCorpusConfig {
    pub records: usize,
    pub seed: u64,
}

impl Default for LogCorpusConfig {
    fn default() -> Self {
        LogCorpusConfig {
            records: 500,
            seed: 0,
        }
    }
}

pub struct LogCorpus {
    /// One JSON record per line.
    pub jsonl: String,
    /// (record_id, event family) labels aligned with corpus line numbers.
    pub labels: Vec<(String, String)>,
}

pub const EVENTS: [&str; 12] = [
    "assumerole",
    "getobject",
    "putobject",
    "listbuckets",
    "createuser",
    "deleteuser",
    "startsession",
    "stopsession",
    "putpolicy",
    "getpolicy",
    "updatetable",
    "querytable",
];
pub const SOURCES: [&str; 6] = ["sts", "s3", "iam", "ssm", "dynamodb", "kms"];
const UTYPES: [&str; 4] = ["iamuser", "assumedrole", "federated", "root"];
const ISSUERS: [&str; 4] = ["corp", "partner", "external", "internal"];
const ITYPES: [&str; 4] = ["oidc", "saml", "aws", "local"];
const MFA: [&str; 4] = ["enabled", "disabled", "enforced", "none"];
const REGIONS: [&str; 8] = [
    "useast1", "uswest2", "eucentral1", "euwest1", "apsouth1", "apnortheast1", "saeast1",
    "cacentral1",
];

fn source_of(event: usize) -> &'static str {
    SOURCES[event % SOURCES.len()]
}

struct RecordSeeds {
    event: usize,
    user: usize,
    utype: usize,
}

/// Render one record. Every formatted value is a pure function of the
/// seeds plus the few independent draws taken from `rng`.
fn render_record(s: &RecordSeeds, rng: &mut ChaCha8Rng) -> String {
    let RecordSeeds { event: e, user: u, utype: t } = *s;
    let version = if rng.random::<bool>() { "v1" } else { "v2" };
    let date = rng.random_range(0..4);
    let trace_len = rng.random_range(14..=18);
    let with_attributes = rng.random::<f64>() < 0.75;
    let family = e % 6;

    let mut r = String::new();
    let _ = write!(
        r,
        r#"{{"eventversion":"{version}","eventname":"{event}","eventsource":"{source}","awsregion":"{region}""#,
        event = EVENTS[e],
        source = source_of(e),
        region = REGIONS[u % 8],
    );
    let _ = write!(
        r,
        r#","useridentity":{{"type":"{utype}","username":"user{u:02}","accountid":"acct{u:02} g{g}","sessioncontext":{{"createddate":"d{date}","mfa":"{mfa}","issuer":{{"name":"{issuer}","type":"{itype}"}}}}}}"#,
        utype = UTYPES[t],
        g = u % 4,
        mfa = MFA[t],
        issuer = ISSUERS[t],
        itype = ITYPES[t],
    );
    r.push_str(r#","audit":{"trace":["#);
    for i in 0..trace_len {
        if i > 0 {
            r.push(',');
        }
        let j = rng.random_range(0..3);
        let _ = write!(r, r#""t{family}{j} u{j}""#);
    }
    let _ = write!(r, r#"],"hash":"h{}"}}"#, (e * 7 + u) % 8);
    let _ = write!(
        r,
        r#","requestparameters":{{"bucketname":"b{e:02} z{z}","path":"p{path}""#,
        z = e % 8,
        path = (e + u) % 8,
    );
    if with_attributes {
        let _ = write!(
            r,
            r#","attributes":{{"mode":"m{mode}","flag":"f{flag}"}}"#,
            mode = e % 6,
            flag = (e + 3 * u) % 4,
        );
    }
    r.push('}');
    let _ = write!(
        r,
        r#","responseelements":{{"status":"s{e:02} r{rr}","code":"k{k} q{q}","items":["ia{ia}","ib{ib}"],"latency":"ms{ms}"}}}}"#,
        rr = e % 4,
        k = (e + 5) % 8,
        q = (e + u) % 4,
        ia = (e + 3) % 8,
        ib = (e + u) % 8,
        ms = (e * 3 + u) % 4,
    );
    r
}

pub fn gen_log_corpus(cfg: &LogCorpusConfig) -> LogCorpus {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut jsonl = String::new();
    let mut labels = Vec::with_capacity(cfg.records);
    for line in 0..cfg.records {
        let seeds = RecordSeeds {
            event: rng.random_range(0..EVENTS.len()),
            user: rng.random_range(0..12),
            utype: rng.random_range(0..UTYPES.len()),
        };
        let record = render_record(&seeds, &mut rng);
        jsonl.push_str(&record);
        jsonl.push('\n');
        labels.push((
            format!("L{:06}", line + 1),
            source_of(seeds.event).to_string(),
        ));
    }
    LogCorpus { jsonl, labels }
}

#[derive(Debug, Clone)]
pub struct CopurchaseConfig {
    pub items: usize,
    pub users: usize,
    pub history_len: usize,
    pub seed: u64,
}

impl Default for CopurchaseConfig {
    fn default() -> Self {
        CopurchaseConfig {
            items: 200,
            users: 30,
            history_len: 30,
            seed: 0,
        }
    }
}

pub struct CopurchaseCorpus {
    /// One JSON item record per line; line n holds record id `L{n:06}`.
    pub items_jsonl: String,
    pub histories: Vec<UserHistory>,
    /// Category label per item, aligned with line numbers.
    pub item_categories: Vec<String>,
}

const CATEGORIES: [&str; 8] = [
    "beauty", "music", "garden", "sports", "kitchen", "books", "toys", "office",
];

pub fn gen_copurchase_corpus(cfg: &CopurchaseConfig) -> CopurchaseCorpus {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut items_jsonl = String::new();
    let mut item_categories = Vec::with_capacity(cfg.items);
    let mut by_category: Vec<Vec<String>> = vec![Vec::new(); CATEGORIES.len()];

    for line in 0..cfg.items {
        let cat = rng.random_range(0..CATEGORIES.len());
        let record_id = format!("L{:06}", line + 1);
        by_category[cat].push(record_id.clone());
        item_categories.push(CATEGORIES[cat].to_string());
        // One category-coupled field per subtree, generic pools elsewhere,
        // and a review filler long enough that the trailing subtrees fall
        // outside the first flat-attention window.
        let cat_name = CATEGORIES[cat];
        let title_main = format!("{cat_name}t{}", rng.random_range(0..4));
        let color = format!("{cat_name}col{}", rng.random_range(0..3));
        let tag = format!("{cat_name}tag{}", rng.random_range(0..3));
        let brand = format!("{cat_name}br{}", rng.random_range(0..3));

        let mut record = String::new();
        let _ = write!(
            record,
            r#"{{"category":"{cat_name}","brand":"{brand}","title":{{"main":"{title_main}","sub":"g{}"}}"#,
            rng.random_range(0..4),
        );
        record.push_str(r#","reviews":["#);
        let n_reviews = rng.random_range(16..=20);
        for i in 0..n_reviews {
            if i > 0 {
                record.push(',');
            }
            let _ = write!(
                record,
                r#""rv{} gx{}""#,
                rng.random_range(0..6),
                rng.random_range(0..6),
            );
        }
        record.push(']');
        let _ = write!(
            record,
            r#","attrs":{{"color":"{color}","size":"s{}","weight":"w{}"}},"stats":{{"tag":"{tag}","rating":"r{}","sales":"q{}"}}}}"#,
            rng.random_range(0..4),
            rng.random_range(0..4),
            rng.random_range(0..5),
            rng.random_range(0..6),
        );
        items_jsonl.push_str(&record);
        items_jsonl.push('\n');
    }

    let mut histories = Vec::with_capacity(cfg.users);
    for user in 0..cfg.users {
        let preferred = user % CATEGORIES.len();
        let mut items = Vec::with_capacity(cfg.history_len);
        let mut seen = std::collections::HashSet::new();
        let mut guard = 0;
        while items.len() < cfg.history_len && guard < 10_000 {
            guard += 1;
            let from_preferred = rng.random::<f64>() < 0.85;
            let pool = if from_preferred && !by_category[preferred].is_empty() {
                &by_category[preferred]
            } else {
                let cat = rng.random_range(0..CATEGORIES.len());
                if by_category[cat].is_empty() {
                    continue;
                }
                &by_category[cat]
            };
            let pick = pool[rng.random_range(0..pool.len())].clone();
            if seen.insert(pick.clone()) {
                items.push(pick);
            }
        }
        histories.push(UserHistory {
            user: format!("u{user:02}"),
            items,
        });
    }
    CopurchaseCorpus {
        items_jsonl,
        histories,
        item_categories,
    }
}

pub fn histories_to_jsonl(histories: &[UserHistory]) -> String {
    let mut out = String::new();
    for history in histories {
        out.push_str(&serde_json::to_string(history).expect("history serialization"));
        out.push('\n');
    }
    out
}

pub fn labels_to_csv(labels: &[(String, String)]) -> String {
    let mut out = String::from("record_id,label\n");
    for (id, label) in labels {
        let _ = writeln!(out, "{id},{label}");
    }
    out
}
