#pragma once

#include <string>

#include "mmfgl/graph.hpp"

namespace mmfgl {

// On-disk graph-bundle directory:
//   meta.json            counts, modality descriptors, class count, endianness
//   edges.tsv            one "u<TAB>v" per line, u < v, sorted
//   labels.tsv           "node_id<TAB>label"; nodes without a row are unlabeled
//   feat_<modality>.f32  row-major little-endian 32-bit floats
//   mask_<modality>.bits packed bitset, LSB-first within each byte
// load_bundle(save_bundle(g)) reproduces g bit-exactly.
void save_bundle(const MultimodalGraph& graph, const std::string& dir_path);
MultimodalGraph load_bundle(const std::string& dir_path);

}  // namespace mmfgl
