//! Set-associative instruction cache banks.
//!
//! A bank keeps only tags: the "data" of a line is its base address, which the
//! engine checks on delivery. Replacement fills invalid ways first and falls
//! back to an 8-bit Galois LFSR once a set is full.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum CacheError {
    #[error("invalid geometry: {0}")]
    Geometry(String),
    #[error("line 0x{line:08x} is already present in set {set}")]
    DuplicateLine { line: u32, set: u32 },
    #[error("LFSR state must be non-zero")]
    ZeroSeed,
}

/// Shape of a (possibly multi-banked) cache.
///
/// `total_bytes` covers every bank; each bank holds `sets * ways` lines.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CacheGeometry {
    pub total_bytes: u32,
    pub ways: u32,
    pub line_bytes: u32,
    pub banks: u32,
}

impl CacheGeometry {
    pub fn new(total_bytes: u32, ways: u32, line_bytes: u32, banks: u32) -> Result<Self, CacheError> {
        let g = Self { total_bytes, ways, line_bytes, banks };
        g.validate()?;
        Ok(g)
    }

    /// 512 B private bank: 8 sets of 4 ways of 16 B lines.
    pub fn private_l1() -> Self {
        Self { total_bytes: 512, ways: 4, line_bytes: 16, banks: 1 }
    }

    pub fn validate(&self) -> Result<(), CacheError> {
        let bad = |m: &str| Err(CacheError::Geometry(m.to_string()));
        if self.ways == 0 || self.banks == 0 || self.line_bytes == 0 {
            return bad("ways, banks and line size must be non-zero");
        }
        if !self.line_bytes.is_power_of_two() || self.line_bytes < 4 {
            return bad("line size must be a power of two of at least 4 bytes");
        }
        let per_set = self.ways as u64 * self.line_bytes as u64 * self.banks as u64;
        if self.total_bytes as u64 % per_set != 0 {
            return bad("capacity is not a multiple of ways * line * banks");
        }
        let sets = self.total_bytes as u64 / per_set;
        if sets == 0 || !sets.is_power_of_two() {
            return bad("set count must be a non-zero power of two");
        }
        Ok(())
    }

    pub fn sets(&self) -> u32 {
        self.total_bytes / (self.ways * self.line_bytes * self.banks)
    }

    pub fn lines(&self) -> u32 {
        self.total_bytes / self.line_bytes
    }

    pub fn line_base(&self, addr: u32) -> u32 {
        addr & !(self.line_bytes - 1)
    }

    pub fn bank_of(&self, addr: u32) -> u32 {
        (addr / self.line_bytes) % self.banks
    }
}

/// An address split into tag / set / bank / offset.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct AddressParts {
    pub tag: u32,
    pub set: u32,
    pub bank: u32,
    pub offset: u32,
}

/// Line-interleaved decomposition: consecutive lines go to consecutive banks,
/// then to consecutive sets inside a bank.
pub fn decode_address(addr: u32, g: &CacheGeometry) -> AddressParts {
    let line_index = addr / g.line_bytes;
    let per_bank = line_index / g.banks;
    AddressParts {
        tag: per_bank / g.sets(),
        set: per_bank % g.sets(),
        bank: line_index % g.banks,
        offset: addr % g.line_bytes,
    }
}

pub fn reassemble(p: &AddressParts, g: &CacheGeometry) -> u32 {
    let per_bank = p.tag * g.sets() + p.set;
    let line_index = per_bank * g.banks + p.bank;
    line_index * g.line_bytes + p.offset
}

/// 8-bit Galois LFSR, polynomial x^8 + x^6 + x^5 + x^4 + 1 (taps 0xB8).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Lfsr8(u8);

impl Lfsr8 {
    pub const TAPS: u8 = 0xB8;

    pub fn new(seed: u8) -> Result<Self, CacheError> {
        if seed == 0 {
            return Err(CacheError::ZeroSeed);
        }
        Ok(Self(seed))
    }

    pub fn state(&self) -> u8 {
        self.0
    }

    /// Advances one step and returns the way picked among `ways`.
    pub fn next_way(&mut self, ways: u32) -> u32 {
        let lsb = self.0 & 1;
        self.0 >>= 1;
        if lsb != 0 {
            self.0 ^= Self::TAPS;
        }
        self.0 as u32 % ways
    }
}

/// Stateless form of one PRAND step: `(way, next_state)`.
pub fn prand_next(state: u8, ways: u32) -> Result<(u32, u8), CacheError> {
    let mut l = Lfsr8::new(state)?;
    let way = l.next_way(ways);
    Ok((way, l.state()))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Lookup {
    Hit { way: u32 },
    Miss,
}

impl Lookup {
    pub fn is_hit(&self) -> bool {
        matches!(self, Lookup::Hit { .. })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Insertion {
    pub victim_way: u32,
    pub evicted_tag: Option<u32>,
}

/// Tag array of a single bank plus its replacement state.
#[derive(Debug, Clone)]
pub struct CacheBank {
    sets: u32,
    ways: u32,
    tags: Vec<Option<u32>>,
    prand: Lfsr8,
}

impl CacheBank {
    pub fn new(geometry: &CacheGeometry, seed: u8) -> Result<Self, CacheError> {
        geometry.validate()?;
        let sets = geometry.sets();
        Ok(Self {
            sets,
            ways: geometry.ways,
            tags: vec![None; (sets * geometry.ways) as usize],
            prand: Lfsr8::new(seed)?,
        })
    }

    fn set_slice(&self, set: u32) -> &[Option<u32>] {
        let start = (set * self.ways) as usize;
        &self.tags[start..start + self.ways as usize]
    }

    pub fn lookup(&self, p: &AddressParts) -> Lookup {
        self.set_slice(p.set)
            .iter()
            .position(|t| *t == Some(p.tag))
            .map_or(Lookup::Miss, |w| Lookup::Hit { way: w as u32 })
    }

    /// Two tag ports read in the same cycle.
    pub fn lookup_dual(&self, fetch: &AddressParts, prefetch: &AddressParts) -> (Lookup, Lookup) {
        (self.lookup(fetch), self.lookup(prefetch))
    }

    pub fn insert_line(&mut self, p: &AddressParts) -> Result<Insertion, CacheError> {
        if self.lookup(p).is_hit() {
            return Err(CacheError::DuplicateLine { line: p.tag, set: p.set });
        }
        let base = (p.set * self.ways) as usize;
        let way = match self.set_slice(p.set).iter().position(Option::is_none) {
            Some(w) => w as u32,
            None => self.prand.next_way(self.ways),
        };
        let slot = &mut self.tags[base + way as usize];
        let evicted_tag = slot.replace(p.tag);
        Ok(Insertion { victim_way: way, evicted_tag })
    }

    pub fn prand_state(&self) -> u8 {
        self.prand.state()
    }

    pub fn valid_lines(&self) -> usize {
        self.tags.iter().filter(|t| t.is_some()).count()
    }

    pub fn reset(&mut self) {
        self.tags.iter_mut().for_each(|t| *t = None);
    }

    /// True when no set holds the same valid tag twice.
    pub fn tags_unique(&self) -> bool {
        (0..self.sets).all(|s| {
            let v: Vec<u32> = self.set_slice(s).iter().flatten().copied().collect();
            (0..v.len()).all(|i| !v[i + 1..].contains(&v[i]))
        })
    }
}

/// A cache made of `geometry.banks` banks addressed by byte address.
#[derive(Debug, Clone)]
pub struct Cache {
    geometry: CacheGeometry,
    banks: Vec<CacheBank>,
}

impl Cache {
    /// Bank `i` is seeded from `seed_base + i`, skipping the zero state.
    pub fn new(geometry: CacheGeometry, seed_base: u32) -> Result<Self, CacheError> {
        geometry.validate()?;
        let banks = (0..geometry.banks)
            .map(|i| CacheBank::new(&geometry, lfsr_seed(seed_base + i)))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Self { geometry, banks })
    }

    pub fn geometry(&self) -> &CacheGeometry {
        &self.geometry
    }

    pub fn contains(&self, addr: u32) -> bool {
        let p = decode_address(addr, &self.geometry);
        self.banks[p.bank as usize].lookup(&p).is_hit()
    }

    pub fn lookup(&self, addr: u32) -> Lookup {
        let p = decode_address(addr, &self.geometry);
        self.banks[p.bank as usize].lookup(&p)
    }

    pub fn insert(&mut self, addr: u32) -> Result<Insertion, CacheError> {
        let p = decode_address(addr, &self.geometry);
        self.banks[p.bank as usize].insert_line(&p)
    }

    pub fn banks(&self) -> &[CacheBank] {
        &self.banks
    }
}

/// Maps an arbitrary index onto a non-zero 8-bit seed; index 0 gives 1.
pub fn lfsr_seed(index: u32) -> u8 {
    (index % 255 + 1) as u8
}

#[cfg(test)]
mod tests {
    use super::*;

    fn l15() -> CacheGeometry {
        CacheGeometry::new(4096, 4, 16, 2).unwrap()
    }

    #[test]
    fn default_geometries() {
        assert_eq!(CacheGeometry::private_l1().sets(), 8);
        assert_eq!(l15().sets(), 32);
        assert_eq!(CacheGeometry::new(4096, 4, 16, 8).unwrap().sets(), 8);
        assert!(CacheGeometry::new(4096, 4, 16, 3).is_err());
        assert!(CacheGeometry::new(384, 4, 16, 1).is_err());
    }

    #[test]
    fn decode_examples() {
        let p = decode_address(0xC0, &CacheGeometry::private_l1());
        assert_eq!(p, AddressParts { tag: 1, set: 4, bank: 0, offset: 0 });
        let p = decode_address(0, &CacheGeometry::private_l1());
        assert_eq!(p, AddressParts { tag: 0, set: 0, bank: 0, offset: 0 });
        let p = decode_address(0xC0, &l15());
        assert_eq!(p, AddressParts { tag: 0, set: 6, bank: 0, offset: 0 });
    }

    #[test]
    fn lfsr_reference_sequence() {
        // Reference values from an independent Galois LFSR evaluation.
        let expected = [(0xB8, 0), (0x5C, 0), (0x2E, 2), (0x17, 3), (0xB3, 3), (0xE1, 1), (0xC8, 0), (0x64, 0)];
        let mut s = 0x01;
        for (state, way) in expected {
            let (w, next) = prand_next(s, 4).unwrap();
            assert_eq!((next, w), (state, way));
            s = next;
        }
        assert_eq!(prand_next(0, 4), Err(CacheError::ZeroSeed));
    }

    #[test]
    fn lfsr_is_maximal() {
        for seed in 1..=255u8 {
            let mut l = Lfsr8::new(seed).unwrap();
            let mut seen = [false; 256];
            for _ in 0..255 {
                l.next_way(4);
                assert_ne!(l.state(), 0);
                seen[l.state() as usize] = true;
            }
            assert_eq!(seen.iter().filter(|s| **s).count(), 255);
            assert_eq!(l.state(), seed);
        }
    }

    #[test]
    fn lookup_and_insert() {
        let g = CacheGeometry::private_l1();
        let mut bank = CacheBank::new(&g, 1).unwrap();
        assert_eq!(bank.lookup(&decode_address(0x40, &g)), Lookup::Miss);
        let ins = bank.insert_line(&decode_address(0xC0, &g)).unwrap();
        assert_eq!(ins, Insertion { victim_way: 0, evicted_tag: None });
        assert!(bank.lookup(&decode_address(0xC0, &g)).is_hit());
        assert!(bank.lookup(&decode_address(0xC4, &g)).is_hit());
        assert_eq!(
            bank.insert_line(&decode_address(0xC8, &g)),
            Err(CacheError::DuplicateLine { line: 1, set: 4 })
        );
    }

    #[test]
    fn dual_lookup_matches_single() {
        let g = CacheGeometry::private_l1();
        let mut bank = CacheBank::new(&g, 3).unwrap();
        let b0 = decode_address(0xB0, &g);
        let c0 = decode_address(0xC0, &g);
        assert_eq!(bank.lookup_dual(&b0, &c0), (Lookup::Miss, Lookup::Miss));
        bank.insert_line(&b0).unwrap();
        assert_eq!(bank.lookup_dual(&b0, &c0), (Lookup::Hit { way: 0 }, Lookup::Miss));
        assert_eq!(bank.lookup_dual(&b0, &b0), (Lookup::Hit { way: 0 }, Lookup::Hit { way: 0 }));
    }

    #[test]
    fn full_set_evicts_prand_way() {
        let g = CacheGeometry::private_l1();
        let mut bank = CacheBank::new(&g, 1).unwrap();
        // Five distinct lines in set 0: 0x000, 0x080, 0x100, 0x180, 0x200.
        for i in 0..4u32 {
            let ins = bank.insert_line(&decode_address(i * 0x80, &g)).unwrap();
            assert_eq!(ins.victim_way, i);
        }
        // Seed 1 steps to 0xB8, way 0 holds tag 0.
        let ins = bank.insert_line(&decode_address(0x200, &g)).unwrap();
        assert_eq!(ins, Insertion { victim_way: 0, evicted_tag: Some(0) });
        // 0x5C -> way 0 again, evicting the tag just inserted.
        let ins = bank.insert_line(&decode_address(0x280, &g)).unwrap();
        assert_eq!(ins, Insertion { victim_way: 0, evicted_tag: Some(4) });
        // 0x2E -> way 2.
        let ins = bank.insert_line(&decode_address(0x300, &g)).unwrap();
        assert_eq!(ins, Insertion { victim_way: 2, evicted_tag: Some(2) });
        assert!(bank.tags_unique());
    }

    #[test]
    fn multi_bank_routing() {
        let mut c = Cache::new(l15(), 0).unwrap();
        c.insert(0xC0).unwrap();
        c.insert(0xD0).unwrap();
        assert_eq!(c.banks()[0].valid_lines(), 1);
        assert_eq!(c.banks()[1].valid_lines(), 1);
        assert!(c.contains(0xCC) && c.contains(0xD4) && !c.contains(0xE0));
        assert_eq!(c.banks()[0].prand_state(), 1);
        assert_eq!(c.banks()[1].prand_state(), 2);
    }
}
