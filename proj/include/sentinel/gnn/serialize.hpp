#pragma once

#include "sentinel/common/binary_io.hpp"
#include "sentinel/gnn/model.hpp"

namespace sentinel::gnn {

// Little-endian layout: u32 layer count, then per layer the three tensors
// (rows, cols, values), then w_out and the revision.
void write_params(ByteWriter& w, const ParamSet& p);
ParamSet read_params(ByteReader& r);

void write_adam(ByteWriter& w, const AdamState& s);
AdamState read_adam(ByteReader& r);

void write_options(ByteWriter& w, const ModelOptions& o);
ModelOptions read_options(ByteReader& r);

}  // namespace sentinel::gnn
