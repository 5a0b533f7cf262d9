//! Synthetic personal records. Every field is drawn from a fixed character
//! template (digit groups, base58, hex) or a fixed word list, then embedded
//! in one of three prose templates.

use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{contract_err, Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PiiType {
    Name,
    Phone,
    Email,
    Fax,
    Birthday,
    Ssn,
    Address,
    Job,
    Bitcoin,
    Uuid,
}

impl PiiType {
    pub const ALL: [PiiType; 10] = [
        PiiType::Name,
        PiiType::Phone,
        PiiType::Email,
        PiiType::Fax,
        PiiType::Birthday,
        PiiType::Ssn,
        PiiType::Address,
        PiiType::Job,
        PiiType::Bitcoin,
        PiiType::Uuid,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            PiiType::Name => "name",
            PiiType::Phone => "phone",
            PiiType::Email => "email",
            PiiType::Fax => "fax",
            PiiType::Birthday => "birthday",
            PiiType::Ssn => "ssn",
            PiiType::Address => "address",
            PiiType::Job => "job",
            PiiType::Bitcoin => "bitcoin",
            PiiType::Uuid => "uuid",
        }
    }
}

impl fmt::Display for PiiType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for PiiType {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        PiiType::ALL
            .into_iter()
            .find(|t| t.as_str().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::Contract(format!("unknown PII type '{s}'")))
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PiiRecord {
    pub name: String,
    pub phone: String,
    pub email: String,
    pub fax: String,
    pub birthday: String,
    pub ssn: String,
    pub address: String,
    pub job: String,
    pub bitcoin: String,
    pub uuid: String,
    pub rendered: String,
}

impl PiiRecord {
    pub fn get(&self, ty: PiiType) -> &str {
        match ty {
            PiiType::Name => &self.name,
            PiiType::Phone => &self.phone,
            PiiType::Email => &self.email,
            PiiType::Fax => &self.fax,
            PiiType::Birthday => &self.birthday,
            PiiType::Ssn => &self.ssn,
            PiiType::Address => &self.address,
            PiiType::Job => &self.job,
            PiiType::Bitcoin => &self.bitcoin,
            PiiType::Uuid => &self.uuid,
        }
    }
}

const FIRST_NAMES: &[&str] = &[
    "James", "Mary", "Robert", "Patricia", "John", "Jennifer", "Michael", "Linda", "David",
    "Elizabeth", "William", "Barbara", "Richard", "Susan", "Joseph", "Jessica", "Thomas", "Sarah",
    "Charles", "Karen", "Daniel", "Nancy", "Matthew", "Lisa", "Anthony", "Betty", "Mark", "Sandra",
    "Donald", "Ashley", "Steven", "Emily", "Paul", "Donna", "Andrew", "Michelle", "Joshua",
    "Carol", "Kevin", "Amanda",
];

const LAST_NAMES: &[&str] = &[
    "Smith", "Johnson", "Williams", "Brown", "Jones", "Garcia", "Miller", "Davis", "Rodriguez",
    "Martinez", "Hernandez", "Lopez", "Gonzalez", "Wilson", "Anderson", "Thomas", "Taylor",
    "Moore", "Jackson", "Martin", "Lee", "Perez", "Thompson", "White", "Harris", "Sanchez",
    "Clark", "Ramirez", "Lewis", "Robinson", "Walker", "Young", "Allen", "King", "Wright",
    "Scott", "Torres", "Nguyen", "Hill", "Flores",
];

const EMAIL_DOMAINS: [&str; 8] = [
    "gmail.com",
    "yahoo.com",
    "outlook.com",
    "hotmail.com",
    "protonmail.com",
    "icloud.com",
    "aol.com",
    "mail.com",
];

const STREET_NAMES: &[&str] = &[
    "Maple", "Oak", "Pine", "Cedar", "Elm", "Washington", "Lake", "Hill", "Park", "Sunset",
    "River", "Highland", "Church", "Mill", "Spring", "Forest", "Meadow", "Valley", "Ridge",
    "Franklin",
];

const STREET_SUFFIXES: &[&str] = &["Street", "Avenue", "Road", "Lane", "Drive", "Court", "Boulevard", "Way"];

const JOB_TITLES: [&str; 50] = [
    "accountant", "actor", "architect", "baker", "barber", "biologist", "carpenter", "cashier",
    "chef", "chemist", "civil engineer", "data analyst", "dentist", "designer", "electrician",
    "economist", "farmer", "firefighter", "graphic designer", "historian", "journalist", "judge",
    "lawyer", "librarian", "machinist", "mechanic", "nurse", "optician", "painter", "paramedic",
    "pharmacist", "photographer", "physicist", "pilot", "plumber", "police officer", "professor",
    "psychologist", "real estate agent", "receptionist", "sales manager", "scientist",
    "social worker", "software engineer", "surgeon", "teacher", "translator", "veterinarian",
    "web developer", "chief financial officer",
];

const BASE58: &[u8] = b"123456789ABCDEFGHJKLMNPQRSTUVWXYZabcdefghijkmnopqrstuvwxyz";
const HEX: &[u8] = b"0123456789abcdef";

fn digits(rng: &mut ChaCha8Rng, n: usize) -> String {
    (0..n).map(|_| char::from(b'0' + rng.gen_range(0..10u8))).collect()
}

fn chars_from(rng: &mut ChaCha8Rng, alphabet: &[u8], n: usize) -> String {
    (0..n)
        .map(|_| char::from(alphabet[rng.gen_range(0..alphabet.len())]))
        .collect()
}

fn days_in_month(year: i32, month: u32) -> u32 {
    match month {
        1 | 3 | 5 | 7 | 8 | 10 | 12 => 31,
        4 | 6 | 9 | 11 => 30,
        _ if (year % 4 == 0 && year % 100 != 0) || year % 400 == 0 => 29,
        _ => 28,
    }
}

fn pick<'a>(rng: &mut ChaCha8Rng, list: &[&'a str]) -> &'a str {
    list.choose(rng).expect("non-empty list")
}

fn render(rng: &mut ChaCha8Rng, r: &PiiRecord, first: &str) -> String {
    match rng.gen_range(0..3) {
        0 => format!(
            "{} works as a {} and lives at {}. Born on {}, {first} can be reached at {} or by fax at {}, \
             and by email at {}. SSN: {}. Bitcoin wallet: {}. Customer ID: {}.",
            r.name, r.job, r.address, r.birthday, r.phone, r.fax, r.email, r.ssn, r.bitcoin, r.uuid
        ),
        1 => format!(
            "Contact {} ({}) at {}, fax {}, email {}. Address: {}. Date of birth: {}. \
             SSN {}. Payments go to {}. Record {}.",
            r.name, r.job, r.phone, r.fax, r.email, r.address, r.birthday, r.ssn, r.bitcoin, r.uuid
        ),
        _ => format!(
            "Our {} {} was born {} and lives at {}. Phone {}, fax {}. Write to {} for details. \
             Social security number {}, bitcoin address {}, account {}.",
            r.job, r.name, r.birthday, r.address, r.phone, r.fax, r.email, r.ssn, r.bitcoin, r.uuid
        ),
    }
}

/// Generates `n` records deterministically from `seed`.
pub fn generate_pii_dataset(n: usize, seed: u64) -> Result<Vec<PiiRecord>> {
    if n < 1 {
        return contract_err("PII dataset size must be at least 1");
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(n);
    for _ in 0..n {
        let first = pick(&mut rng, FIRST_NAMES);
        let last = pick(&mut rng, LAST_NAMES);
        let name = format!("{first} {last}");

        let n_digits = rng.gen_range(2..=4);
        let email = format!(
            "{}.{}{}@{}",
            first.to_lowercase(),
            last.to_lowercase(),
            digits(&mut rng, n_digits),
            pick(&mut rng, &EMAIL_DOMAINS)
        );
        let phone = format!("{}-{}-{}", digits(&mut rng, 3), digits(&mut rng, 3), digits(&mut rng, 4));
        let fax = format!("{}-{}-{}", digits(&mut rng, 3), digits(&mut rng, 3), digits(&mut rng, 4));
        let ssn = format!("{}-{}-{}", digits(&mut rng, 3), digits(&mut rng, 2), digits(&mut rng, 4));

        let year = rng.gen_range(1940..=2005);
        let month = rng.gen_range(1..=12);
        let day = rng.gen_range(1..=days_in_month(year, month));
        let birthday = format!("{year:04}-{month:02}-{day:02}");

        let address = format!(
            "{} {} {}",
            rng.gen_range(1..10000),
            pick(&mut rng, STREET_NAMES),
            pick(&mut rng, STREET_SUFFIXES)
        );
        let job = pick(&mut rng, &JOB_TITLES).to_string();

        let btc_len = rng.gen_range(25..=33);
        let bitcoin = format!(
            "{}{}",
            if rng.gen_bool(0.5) { '1' } else { '3' },
            chars_from(&mut rng, BASE58, btc_len)
        );
        let uuid = format!(
            "{}-{}-{}-{}-{}",
            chars_from(&mut rng, HEX, 8),
            chars_from(&mut rng, HEX, 4),
            chars_from(&mut rng, HEX, 4),
            chars_from(&mut rng, HEX, 4),
            chars_from(&mut rng, HEX, 12)
        );

        let mut record = PiiRecord {
            name,
            phone,
            email,
            fax,
            birthday,
            ssn,
            address,
            job,
            bitcoin,
            uuid,
            rendered: String::new(),
        };
        record.rendered = render(&mut rng, &record, first);
        out.push(record);
    }
    Ok(out)
}

/// JSON array of records with all ten fields plus `rendered`.
pub fn pii_to_json(records: &[PiiRecord]) -> Result<String> {
    Ok(serde_json::to_string_pretty(records)?)
}
