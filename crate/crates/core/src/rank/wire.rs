//! Binary message layout shared by all ranks.
//!
//! All integers and floats are little-endian.
//!
//! ```text
//! frame   := "MSPW" version:u16 kind:u8 0:u8 sender:u32 receiver:u32 payload
//! payload := count:u32 record{count}
//! record  := len:u32 bytes{len}
//! ```
//!
//! Record bodies by message kind:
//!
//! | kind | body |
//! |---|---|
//! | `BranchExchange`, `NodeFetchReply` | node summary (below) |
//! | `NodeFetchRequest` | `rank:u32 index:u32` |
//! | `SynapseRequestBatch` | `axon:u64 dendrite:u64 count:u64` |
//! | `SynapseResponseBatch` | `axon:u64 dendrite:u64 requested:u64 accepted:u64` |
//! | `DeletionNotice` | `neuron:u64 partner:u64 side:u8` (0 axon, 1 dendrite) |
//!
//! A node summary is `rank:u32 index:u32 key:u128 min:f64x3 side:f64`, two
//! aggregates `sum:u64 has_centroid:u8 [centroid:f64x3]` (axons, then
//! dendrites), `has_neuron:u8 [id:u64 position:f64x3]`, and a child mask
//! `mask:u8` followed by `rank:u32 index:u32` for every set bit.

use crate::connectivity::{SynapseRequest, SynapseResponse};
use crate::error::{Error, Result};
use crate::geometry::{Cell, Vec3};
use crate::model::{Deletion, Side};
use crate::octree::{Aggregate, NodeKey, NodeRef, NodeSummary};

pub const MAGIC: [u8; 4] = *b"MSPW";
pub const VERSION: u16 = 1;
const HEADER_LEN: usize = 16;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum MessageKind {
    BranchExchange,
    NodeFetchRequest,
    NodeFetchReply,
    SynapseRequestBatch,
    SynapseResponseBatch,
    DeletionNotice,
}

impl MessageKind {
    pub const ALL: [MessageKind; 6] = [
        MessageKind::BranchExchange,
        MessageKind::NodeFetchRequest,
        MessageKind::NodeFetchReply,
        MessageKind::SynapseRequestBatch,
        MessageKind::SynapseResponseBatch,
        MessageKind::DeletionNotice,
    ];

    pub fn code(self) -> u8 {
        self as u8 + 1
    }

    pub fn from_code(code: u8) -> Result<Self> {
        MessageKind::ALL
            .get((code as usize).wrapping_sub(1))
            .copied()
            .ok_or_else(|| Error::Wire(format!("unknown message kind {code}")))
    }
}

/// One message between two ranks; `payload` holds the encoded records.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Message {
    pub kind: MessageKind,
    pub sender: u32,
    pub receiver: u32,
    pub payload: Vec<u8>,
}

impl Message {
    pub fn new<T: Record>(kind: MessageKind, sender: u32, receiver: u32, records: &[T]) -> Self {
        Message {
            kind,
            sender,
            receiver,
            payload: encode_records(records),
        }
    }

    pub fn records<T: Record>(&self) -> Result<Vec<T>> {
        decode_records(&self.payload)
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(HEADER_LEN + self.payload.len());
        out.extend_from_slice(&MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.push(self.kind.code());
        out.push(0);
        out.extend_from_slice(&self.sender.to_le_bytes());
        out.extend_from_slice(&self.receiver.to_le_bytes());
        out.extend_from_slice(&self.payload);
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Message> {
        let mut r = Reader::new(bytes);
        if r.take(4)? != MAGIC {
            return Err(Error::Wire("bad magic".into()));
        }
        let version = r.u16()?;
        if version != VERSION {
            return Err(Error::Wire(format!("unsupported version {version}")));
        }
        let kind = MessageKind::from_code(r.u8()?)?;
        r.u8()?;
        let sender = r.u32()?;
        let receiver = r.u32()?;
        Ok(Message {
            kind,
            sender,
            receiver,
            payload: r.rest().to_vec(),
        })
    }
}

/// A fixed-schema record body.
pub trait Record: Sized {
    fn write(&self, out: &mut Vec<u8>);
    fn read(r: &mut Reader<'_>) -> Result<Self>;
}

pub fn encode_records<T: Record>(records: &[T]) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(&(records.len() as u32).to_le_bytes());
    let mut body = Vec::new();
    for rec in records {
        body.clear();
        rec.write(&mut body);
        out.extend_from_slice(&(body.len() as u32).to_le_bytes());
        out.extend_from_slice(&body);
    }
    out
}

pub fn decode_records<T: Record>(bytes: &[u8]) -> Result<Vec<T>> {
    let mut r = Reader::new(bytes);
    let count = r.u32()? as usize;
    let mut out = Vec::with_capacity(count.min(bytes.len() / 4));
    for _ in 0..count {
        let len = r.u32()? as usize;
        let mut body = Reader::new(r.take(len)?);
        out.push(T::read(&mut body)?);
        if !body.rest().is_empty() {
            return Err(Error::Wire("trailing bytes in record".into()));
        }
    }
    if !r.rest().is_empty() {
        return Err(Error::Wire("trailing bytes after records".into()));
    }
    Ok(out)
}

pub struct Reader<'a> {
    bytes: &'a [u8],
}

impl<'a> Reader<'a> {
    pub fn new(bytes: &'a [u8]) -> Self {
        Reader { bytes }
    }

    pub fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if n > self.bytes.len() {
            return Err(Error::Wire(format!("truncated: wanted {n} bytes, {} left", self.bytes.len())));
        }
        let (head, tail) = self.bytes.split_at(n);
        self.bytes = tail;
        Ok(head)
    }

    fn array<const N: usize>(&mut self) -> Result<[u8; N]> {
        Ok(self.take(N)?.try_into().expect("length checked"))
    }

    pub fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    pub fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.array()?))
    }

    pub fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.array()?))
    }

    pub fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.array()?))
    }

    pub fn u128(&mut self) -> Result<u128> {
        Ok(u128::from_le_bytes(self.array()?))
    }

    pub fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.array()?))
    }

    pub fn vec3(&mut self) -> Result<Vec3> {
        Ok(Vec3([self.f64()?, self.f64()?, self.f64()?]))
    }

    fn flag(&mut self) -> Result<bool> {
        match self.u8()? {
            0 => Ok(false),
            1 => Ok(true),
            b => Err(Error::Wire(format!("bad flag byte {b}"))),
        }
    }

    pub fn rest(&self) -> &'a [u8] {
        self.bytes
    }
}

fn put_vec3(out: &mut Vec<u8>, v: Vec3) {
    for x in v.0 {
        out.extend_from_slice(&x.to_le_bytes());
    }
}

fn put_aggregate(out: &mut Vec<u8>, a: &Aggregate) {
    out.extend_from_slice(&a.sum.to_le_bytes());
    match a.centroid {
        Some(c) => {
            out.push(1);
            put_vec3(out, c);
        }
        None => out.push(0),
    }
}

fn read_aggregate(r: &mut Reader<'_>) -> Result<Aggregate> {
    let sum = r.u64()?;
    let centroid = if r.flag()? { Some(r.vec3()?) } else { None };
    Ok(Aggregate { sum, centroid })
}

impl Record for NodeRef {
    fn write(&self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.rank.to_le_bytes());
        out.extend_from_slice(&self.index.to_le_bytes());
    }

    fn read(r: &mut Reader<'_>) -> Result<Self> {
        Ok(NodeRef::new(r.u32()?, r.u32()?))
    }
}

impl Record for NodeSummary {
    fn write(&self, out: &mut Vec<u8>) {
        self.node.write(out);
        out.extend_from_slice(&self.key.0.to_le_bytes());
        put_vec3(out, self.cell.min);
        out.extend_from_slice(&self.cell.side.to_le_bytes());
        put_aggregate(out, &self.axons);
        put_aggregate(out, &self.dendrites);
        match self.neuron {
            Some((id, p)) => {
                out.push(1);
                out.extend_from_slice(&id.to_le_bytes());
                put_vec3(out, p);
            }
            None => out.push(0),
        }
        let mask = self
            .children
            .iter()
            .enumerate()
            .fold(0u8, |m, (i, c)| if c.is_some() { m | 1 << i } else { m });
        out.push(mask);
        for c in self.children.iter().flatten() {
            c.write(out);
        }
    }

    fn read(r: &mut Reader<'_>) -> Result<Self> {
        let node = NodeRef::read(r)?;
        let key = NodeKey(r.u128()?);
        let cell = Cell {
            min: r.vec3()?,
            side: r.f64()?,
        };
        let axons = read_aggregate(r)?;
        let dendrites = read_aggregate(r)?;
        let neuron = if r.flag()? { Some((r.u64()?, r.vec3()?)) } else { None };
        let mask = r.u8()?;
        let mut children = [None; 8];
        for (i, c) in children.iter_mut().enumerate() {
            if mask & (1 << i) != 0 {
                *c = Some(NodeRef::read(r)?);
            }
        }
        Ok(NodeSummary {
            node,
            key,
            cell,
            axons,
            dendrites,
            neuron,
            children,
        })
    }
}

impl Record for SynapseRequest {
    fn write(&self, out: &mut Vec<u8>) {
        for v in [self.axon_neuron, self.dendrite_neuron, self.count] {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }

    fn read(r: &mut Reader<'_>) -> Result<Self> {
        Ok(SynapseRequest {
            axon_neuron: r.u64()?,
            dendrite_neuron: r.u64()?,
            count: r.u64()?,
        })
    }
}

impl Record for SynapseResponse {
    fn write(&self, out: &mut Vec<u8>) {
        for v in [self.axon_neuron, self.dendrite_neuron, self.requested, self.accepted] {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }

    fn read(r: &mut Reader<'_>) -> Result<Self> {
        Ok(SynapseResponse {
            axon_neuron: r.u64()?,
            dendrite_neuron: r.u64()?,
            requested: r.u64()?,
            accepted: r.u64()?,
        })
    }
}

impl Record for Deletion {
    fn write(&self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.neuron.to_le_bytes());
        out.extend_from_slice(&self.partner.to_le_bytes());
        out.push(match self.side {
            Side::Axon => 0,
            Side::Dendrite => 1,
        });
    }

    fn read(r: &mut Reader<'_>) -> Result<Self> {
        let neuron = r.u64()?;
        let partner = r.u64()?;
        let side = match r.u8()? {
            0 => Side::Axon,
            1 => Side::Dendrite,
            b => return Err(Error::Wire(format!("bad side byte {b}"))),
        };
        Ok(Deletion { neuron, partner, side })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn summary() -> NodeSummary {
        let mut children = [None; 8];
        children[1] = Some(NodeRef::new(2, 17));
        children[6] = Some(NodeRef::new(3, 4));
        NodeSummary {
            node: NodeRef::new(1, 9),
            key: NodeKey::ROOT.child(5).child(2),
            cell: Cell {
                min: Vec3([1.0, 2.0, 3.0]),
                side: 0.25,
            },
            axons: Aggregate::point(Vec3([1.1, 2.1, 3.1]), 3),
            dendrites: Aggregate::default(),
            neuron: Some((42, Vec3([1.1, 2.1, 3.1]))),
            children,
        }
    }

    #[test]
    fn summary_round_trip() {
        let m = Message::new(MessageKind::NodeFetchReply, 1, 0, &[summary()]);
        let back = Message::decode(&m.encode()).unwrap();
        assert_eq!(back, m);
        assert_eq!(back.records::<NodeSummary>().unwrap(), vec![summary()]);
    }

    #[test]
    fn little_endian_header() {
        let m = Message::new::<NodeRef>(MessageKind::NodeFetchRequest, 0x0102, 7, &[]);
        let b = m.encode();
        assert_eq!(&b[..4], b"MSPW");
        assert_eq!(&b[4..6], &[1, 0]);
        assert_eq!(b[6], 2);
        assert_eq!(&b[8..12], &[2, 1, 0, 0]);
        assert_eq!(&b[16..], &[0, 0, 0, 0]);
    }

    #[test]
    fn rejects_corruption() {
        let m = Message::new(
            MessageKind::SynapseRequestBatch,
            0,
            1,
            &[SynapseRequest { axon_neuron: 1, dendrite_neuron: 2, count: 3 }],
        );
        let mut b = m.encode();
        b[4] = 9;
        assert!(Message::decode(&b).is_err());
        let m2 = Message::decode(&m.encode()).unwrap();
        let mut p = m2.payload.clone();
        p.pop();
        assert!(decode_records::<SynapseRequest>(&p).is_err());
        assert!(decode_records::<SynapseResponse>(&m2.payload).is_err());
    }

    #[test]
    fn deletion_round_trip() {
        let d = Deletion { neuron: 5, partner: 6, side: Side::Dendrite };
        let bytes = encode_records(&[d, d]);
        assert_eq!(decode_records::<Deletion>(&bytes).unwrap(), vec![d, d]);
    }
}
