#pragma once

#include "sentinel/common/binary_io.hpp"
#include "sentinel/graph/snapshot.hpp"

namespace sentinel::graph {

// Binary forms used by checkpoints. Strings are u32-length-prefixed, numbers
// little-endian; see docs/checkpoint-format.md.
void write_snapshot(ByteWriter& w, const GraphSnapshot& s);
GraphSnapshot read_snapshot(ByteReader& r);

void write_history(ByteWriter& w, const History& h);
History read_history(ByteReader& r);

void write_spec(ByteWriter& w, const FeatureSpec& s);
FeatureSpec read_spec(ByteReader& r);

void write_entity(ByteWriter& w, const EntityId& e);
EntityId read_entity(ByteReader& r);

}  // namespace sentinel::graph
