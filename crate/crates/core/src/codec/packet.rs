//! "QNFP" frame packets. The byte layout is specified in `docs/bitstream.md`.

use half::f16;

use super::coo::SparseCoo;
use super::range::{entropy_decode, entropy_encode};
use super::residual::{AttributeResidual, ResidualSet};
use crate::error::{Error, Result};
use crate::quantizer::{AttributeKind, LinearDecoder};
use crate::scene::{basis_count, GaussianRecord};

pub const PACKET_MAGIC: [u8; 4] = *b"QNFP";
pub const PACKET_VERSION: u16 = 1;
pub const HEADER_LEN: usize = 20;
pub const TABLE_ENTRY_LEN: usize = 13;

const RAW_FLAG: u8 = 0x10;
const SECTION_POSITIONS: u8 = 0x20;
const SECTION_REMOVALS: u8 = 0x21;
const SECTION_ADDITIONS: u8 = 0x22;

/// Serializes `r`. Identical inputs give identical bytes.
pub fn pack_frame(r: &ResidualSet) -> Result<Vec<u8>> {
    r.check()?;
    let basis = basis_count(r.sh_degree);
    let mut sections: Vec<(u8, Vec<u8>)> = Vec::new();
    for a in &r.attributes {
        let m = a.kind().residual_dim(basis);
        let mut body = Vec::new();
        match a {
            AttributeResidual::Quantized { kind, dim, latents, decoder } => {
                if decoder.out_dim != m || decoder.in_dim != *dim || latents.len() != r.count_before * dim {
                    return Err(Error::InvalidInput(format!("{} section is inconsistent", kind.name())));
                }
                body.extend((*dim as u16).to_le_bytes());
                body.extend((m as u16).to_le_bytes());
                decoder.weights.iter().for_each(|w| body.extend(w.to_le_bytes()));
                body.extend(entropy_encode(latents));
                sections.push((kind.code(), body));
            }
            AttributeResidual::Raw { kind, values } => {
                if values.len() != r.count_before * m {
                    return Err(Error::InvalidInput(format!("raw {} section is inconsistent", kind.name())));
                }
                body.extend((m as u16).to_le_bytes());
                values.iter().for_each(|v| body.extend(v.to_le_bytes()));
                sections.push((RAW_FLAG | kind.code(), body));
            }
        }
    }

    let mut body = (r.positions.len() as u32).to_le_bytes().to_vec();
    r.positions.indices.iter().for_each(|i| body.extend(i.to_le_bytes()));
    r.positions.values.iter().flatten().for_each(|v| body.extend(v.to_le_bytes()));
    sections.push((SECTION_POSITIONS, body));

    let mut body = (r.removals.len() as u32).to_le_bytes().to_vec();
    r.removals.iter().for_each(|i| body.extend(i.to_le_bytes()));
    sections.push((SECTION_REMOVALS, body));

    let mut body = (r.additions.len() as u32).to_le_bytes().to_vec();
    let mut put = |v: f32| body.extend(f16::from_f32(v).to_le_bytes());
    for a in &r.additions {
        a.position.iter().for_each(|&v| put(v));
        a.rotation.iter().for_each(|&v| put(v));
        a.log_scale.iter().for_each(|&v| put(v));
        put(a.opacity_logit);
        a.sh.iter().for_each(|&v| put(v));
    }
    sections.push((SECTION_ADDITIONS, body));

    let table_end = HEADER_LEN + TABLE_ENTRY_LEN * sections.len();
    let total = table_end + sections.iter().map(|(_, b)| b.len()).sum::<usize>();
    let mut out = Vec::with_capacity(total);
    out.extend(PACKET_MAGIC);
    out.extend(PACKET_VERSION.to_le_bytes());
    out.push(r.sh_degree as u8);
    out.push(sections.len() as u8);
    out.extend(r.frame_index.to_le_bytes());
    out.extend((r.count_before as u32).to_le_bytes());
    out.extend((r.count_after() as u32).to_le_bytes());
    let mut offset = table_end;
    for (kind, body) in &sections {
        out.push(*kind);
        out.extend((offset as u32).to_le_bytes());
        out.extend((body.len() as u32).to_le_bytes());
        out.extend(crc32fast::hash(body).to_le_bytes());
        offset += body.len();
    }
    for (_, body) in &sections {
        out.extend(body);
    }
    Ok(out)
}

struct Cursor<'a> {
    data: &'a [u8],
    pos: usize,
    what: &'static str,
}

impl<'a> Cursor<'a> {
    fn new(data: &'a [u8], what: &'static str) -> Self {
        Self { data, pos: 0, what }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.data.len() - self.pos < n {
            return Err(Error::Decode(format!("{} section truncated", self.what)));
        }
        let s = &self.data[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn f32(&mut self) -> Result<f32> {
        Ok(f32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn f16(&mut self) -> Result<f32> {
        Ok(f16::from_le_bytes(self.take(2)?.try_into().unwrap()).to_f32())
    }

    fn count(&mut self, item_bytes: usize) -> Result<usize> {
        let k = self.u32()? as usize;
        if k.saturating_mul(item_bytes) > self.data.len() - self.pos {
            return Err(Error::Decode(format!("{} section declares {k} entries beyond its length", self.what)));
        }
        Ok(k)
    }

    fn rest(&mut self) -> &'a [u8] {
        let s = &self.data[self.pos..];
        self.pos = self.data.len();
        s
    }

    fn finish(&self) -> Result<()> {
        if self.pos != self.data.len() {
            return Err(Error::Decode(format!("{} section has trailing bytes", self.what)));
        }
        Ok(())
    }
}

pub fn unpack_frame(bytes: &[u8]) -> Result<ResidualSet> {
    if bytes.len() < HEADER_LEN {
        return Err(Error::Decode("packet shorter than its header".into()));
    }
    let magic: [u8; 4] = bytes[0..4].try_into().unwrap();
    if magic != PACKET_MAGIC {
        return Err(Error::BadMagic { expected: PACKET_MAGIC, found: magic });
    }
    let version = u16::from_le_bytes([bytes[4], bytes[5]]);
    if version != PACKET_VERSION {
        return Err(Error::UnsupportedVersion { found: version, expected: PACKET_VERSION });
    }
    let sh_degree = bytes[6] as usize;
    if sh_degree > 3 {
        return Err(Error::Decode(format!("SH degree {sh_degree} exceeds 3")));
    }
    let basis = basis_count(sh_degree);
    let n_sections = bytes[7] as usize;
    let rd = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().unwrap());
    let frame_index = rd(8);
    let count_before = rd(12) as usize;
    let count_after = rd(16) as usize;
    let table_end = HEADER_LEN + TABLE_ENTRY_LEN * n_sections;
    if bytes.len() < table_end {
        return Err(Error::Decode("packet section table truncated".into()));
    }

    let mut r = ResidualSet::empty(frame_index, sh_degree, count_before);
    let mut seen = Vec::new();
    let mut expected_offset = table_end;
    for s in 0..n_sections {
        let e = HEADER_LEN + TABLE_ENTRY_LEN * s;
        let kind = bytes[e];
        let offset = rd(e + 1) as usize;
        let len = rd(e + 5) as usize;
        let crc = rd(e + 9);
        if offset != expected_offset || offset.checked_add(len).is_none_or(|end| end > bytes.len()) {
            return Err(Error::Decode(format!("section {s} lies outside the packet")));
        }
        expected_offset = offset + len;
        let body = &bytes[offset..offset + len];
        if crc32fast::hash(body) != crc {
            return Err(Error::Decode(format!("section {s} checksum mismatch")));
        }
        if seen.contains(&kind) {
            return Err(Error::Decode(format!("duplicate section kind {kind:#04x}")));
        }
        seen.push(kind);
        match kind {
            SECTION_POSITIONS => {
                let mut c = Cursor::new(body, "position");
                let k = c.count(16)?;
                let mut coo = SparseCoo::default();
                for _ in 0..k {
                    coo.indices.push(c.u32()?);
                }
                for _ in 0..k {
                    coo.values.push([c.f32()?, c.f32()?, c.f32()?]);
                }
                c.finish()?;
                r.positions = coo;
            }
            SECTION_REMOVALS => {
                let mut c = Cursor::new(body, "removal");
                let k = c.count(4)?;
                r.removals = (0..k).map(|_| c.u32()).collect::<Result<_>>()?;
                c.finish()?;
            }
            SECTION_ADDITIONS => {
                let mut c = Cursor::new(body, "addition");
                let stride = 3 * basis;
                let k = c.count(2 * (11 + stride))?;
                for _ in 0..k {
                    let position = [c.f16()?, c.f16()?, c.f16()?];
                    let rotation = [c.f16()?, c.f16()?, c.f16()?, c.f16()?];
                    let log_scale = [c.f16()?, c.f16()?, c.f16()?];
                    let opacity_logit = c.f16()?;
                    let sh = (0..stride).map(|_| c.f16()).collect::<Result<_>>()?;
                    r.additions.push(GaussianRecord { position, rotation, log_scale, opacity_logit, sh });
                }
                c.finish()?;
            }
            k => {
                let attr = AttributeKind::from_code(k & !RAW_FLAG)
                    .filter(|_| k & !RAW_FLAG < RAW_FLAG)
                    .ok_or_else(|| Error::Decode(format!("unknown section kind {k:#04x}")))?;
                if seen.iter().filter(|&&x| x & !RAW_FLAG == attr.code()).count() > 1 {
                    return Err(Error::Decode(format!("duplicate {} section", attr.name())));
                }
                let m_expected = attr.residual_dim(basis);
                if k & RAW_FLAG != 0 {
                    let mut c = Cursor::new(body, "raw attribute");
                    let m = c.u16()? as usize;
                    if m != m_expected || body.len() != 2 + 4 * m * count_before {
                        return Err(Error::Decode(format!("raw {} section has the wrong size", attr.name())));
                    }
                    let values = (0..m * count_before).map(|_| c.f32()).collect::<Result<_>>()?;
                    r.attributes.push(AttributeResidual::Raw { kind: attr, values });
                } else {
                    let mut c = Cursor::new(body, "attribute");
                    let dim = c.u16()? as usize;
                    let m = c.u16()? as usize;
                    if m != m_expected || dim == 0 {
                        return Err(Error::Decode(format!("{} section has bad dimensions", attr.name())));
                    }
                    let weights = (0..m * dim).map(|_| c.f32()).collect::<Result<Vec<_>>>()?;
                    let latents = entropy_decode(c.rest(), count_before * dim)?;
                    let decoder = LinearDecoder::new(m, dim, weights)
                        .map_err(|_| Error::Decode(format!("{} decoder weights are not finite", attr.name())))?;
                    r.attributes.push(AttributeResidual::Quantized { kind: attr, dim, latents, decoder });
                }
            }
        }
    }
    if expected_offset != bytes.len() {
        return Err(Error::Decode("packet has trailing bytes".into()));
    }
    r.check()?;
    if r.count_after() != count_after {
        return Err(Error::Decode(format!(
            "header declares {count_after} Gaussians after the frame, sections give {}",
            r.count_after()
        )));
    }
    Ok(r)
}
