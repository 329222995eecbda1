#pragma once

#include <map>
#include <string>

#include "snp/model.hpp"
#include "snp/trainers.hpp"

namespace snp {

// A trained parser with the masks it was trained under and free-form string
// metadata (mode, mask kind, seeds, ...).
struct Checkpoint {
    ParserModel model;
    MaskSet masks;
    std::map<std::string, std::string> metadata;
};

// Layout: 8-byte magic "SNPCKPT1", uint64 header length, JSON header
// (configuration, vocabularies, masks, metadata), uint64 parameter count,
// then the parameters as little-endian IEEE-754 doubles.
std::string serialize_checkpoint(const Checkpoint& ckpt);
Checkpoint deserialize_checkpoint(const std::string& bytes);
void write_checkpoint(const std::string& path, const Checkpoint& ckpt);
Checkpoint read_checkpoint(const std::string& path);

}  // namespace snp
