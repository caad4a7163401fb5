//! Fixtures shared by the benchmarks.

use conet_core::negotiation::{Offer, OfferItem, SessionId};
use conet_core::{Contract, Hash, Identity, SignedEnvelope, Timestamp, TrustRegistry, Value};
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

pub const NOW: Timestamp = Timestamp::from_millis(1_800_000_000_000);

pub struct Fixture {
    pub x: Identity,
    pub y: Identity,
    pub registry: TrustRegistry,
}

impl Fixture {
    pub fn new() -> Self {
        let mut rng = ChaCha20Rng::seed_from_u64(1);
        let x = Identity::generate("x", &mut rng);
        let y = Identity::generate("y", &mut rng);
        let mut registry = TrustRegistry::new();
        for id in [&x, &y] {
            registry
                .register(id, Timestamp::from_millis(0), Timestamp::from_millis(NOW.as_millis() * 2))
                .expect("fresh registry");
        }
        Fixture { x, y, registry }
    }

    /// A first offer from x to y carrying `items` contracts of `args` arguments each.
    pub fn offer(&self, session: u128, items: usize, args: usize) -> SignedEnvelope {
        let contracts = (0..items).map(|i| OfferItem::Contract(contract(i as i64, args))).collect();
        self.x
            .sign_document(&Offer {
                session_id: SessionId(session),
                offer_index: 1,
                sender: self.x.party_id().clone(),
                receiver: self.y.party_id().clone(),
                contracts,
                valid_until: Timestamp::from_millis(NOW.as_millis() + 3_600_000),
                prev_offer_hash: None,
            })
            .expect("offer signs")
    }
}

impl Default for Fixture {
    fn default() -> Self {
        Self::new()
    }
}

/// A contract with `args` arguments of mixed kinds.
pub fn contract(seed: i64, args: usize) -> Contract {
    let template = Hash::of_bytes(b"bench template");
    Contract::new(
        template,
        (0..args).map(|i| {
            let v = match i % 3 {
                0 => Value::Integer(seed * 1000 + i as i64),
                1 => Value::text(format!("argument number {i}")),
                _ => Value::Reference(Hash::of_bytes(&i.to_le_bytes())),
            };
            (format!("k{i:03}"), v)
        }),
    )
}
