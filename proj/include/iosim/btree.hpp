#pragma once

#include <algorithm>
#include <fstream>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "iosim/common.hpp"
#include "iosim/sfunc.hpp"
#include "iosim/xcache.hpp"

namespace iosim::btree {

// One node per page. Fixed 16-byte header, little-endian fields:
//   [0..2)  magic 0xB7EE
//   [2]     kind: 0 internal, 1 leaf
//   [3]     level: 0 at leaves
//   [4..6)  count
//   [6..16) reserved, zero
// Internal payload: count keys (u64, strictly ascending), then count+1 child
// file offsets (u64, page-aligned). Leaf payload: count (key, value) pairs.
// The payload always fits the first 512 bytes of the page regardless of page
// size, which caps internal nodes at 30 keys and leaves at 31 pairs.
inline constexpr u16 kPageMagic = 0xB7EE;
inline constexpr u32 kHeaderBytes = 16;
inline constexpr u32 kMaxInternalKeys = 30;
inline constexpr u32 kMaxLeafPairs = 31;
inline constexpr u8 kKindInternal = 0;
inline constexpr u8 kKindLeaf = 1;

struct KV {
    u64 key = 0;
    u64 value = 0;
};

struct DecodedPage {
    u8 kind = 0;
    u8 level = 0;
    u16 count = 0;
    std::vector<u64> keys;
    std::vector<u64> children; // internal: count+1 file offsets
    std::vector<u64> values;   // leaf: count values
};

namespace detail {

inline u64 get_u64(std::span<const std::byte> b, u64 off) {
    u64 v = 0;
    for (u32 i = 0; i < 8; ++i) v |= static_cast<u64>(std::to_integer<u8>(b[off + i])) << (8 * i);
    return v;
}

inline void put_u64(std::span<std::byte> b, u64 off, u64 v) {
    for (u32 i = 0; i < 8; ++i) b[off + i] = static_cast<std::byte>((v >> (8 * i)) & 0xFF);
}

inline void put_u16(std::span<std::byte> b, u64 off, u16 v) {
    b[off] = static_cast<std::byte>(v & 0xFF);
    b[off + 1] = static_cast<std::byte>((v >> 8) & 0xFF);
}

inline u16 get_u16(std::span<const std::byte> b, u64 off) {
    return static_cast<u16>(std::to_integer<u8>(b[off]) | (std::to_integer<u8>(b[off + 1]) << 8));
}

} // namespace detail

inline DecodedPage parse_page(std::span<const std::byte> page) {
    if (page.size() < kBlockBytes) throw std::invalid_argument("page smaller than 512 bytes");
    DecodedPage p;
    if (detail::get_u16(page, 0) != kPageMagic) throw std::runtime_error("corrupt page: bad magic");
    p.kind = std::to_integer<u8>(page[2]);
    p.level = std::to_integer<u8>(page[3]);
    p.count = detail::get_u16(page, 4);
    if (p.kind == kKindInternal) {
        if (p.count > kMaxInternalKeys) throw std::runtime_error("corrupt page: internal count");
        for (u16 i = 0; i < p.count; ++i) p.keys.push_back(detail::get_u64(page, kHeaderBytes + 8ull * i));
        const u64 child_base = kHeaderBytes + 8ull * p.count;
        for (u16 i = 0; i <= p.count; ++i) p.children.push_back(detail::get_u64(page, child_base + 8ull * i));
    } else if (p.kind == kKindLeaf) {
        if (p.count > kMaxLeafPairs) throw std::runtime_error("corrupt page: leaf count");
        for (u16 i = 0; i < p.count; ++i) {
            p.keys.push_back(detail::get_u64(page, kHeaderBytes + 16ull * i));
            p.values.push_back(detail::get_u64(page, kHeaderBytes + 16ull * i + 8));
        }
    } else {
        throw std::runtime_error("corrupt page: bad kind");
    }
    return p;
}

// Bit-exact on-disk index image. Pages are placed breadth-first with the
// root at file offset 0, so child offsets are known at build time.
struct TreeImage {
    std::vector<std::byte> bytes;
    u32 page_size = 512;
    u32 depth = 0;
    u32 fanout = 0;
    u64 n_keys = 0;

    u64 pages() const { return bytes.size() / page_size; }
    u64 root_off() const { return 0; }

    std::span<const std::byte> page_at(u64 file_off) const {
        if (file_off % page_size != 0 || file_off + page_size > bytes.size())
            throw std::out_of_range("page offset outside image");
        return {bytes.data() + file_off, page_size};
    }
};

namespace detail {

struct BuildNode {
    bool leaf = false;
    std::vector<u64> keys;
    std::vector<u64> values;
    std::vector<std::size_t> children; // indices into the level below
    u64 min_key = 0;
};

} // namespace detail

// Bulk-builds a uniform-depth image from sorted unique pairs. Nodes are
// filled greedily to `fanout`; with `target_depth` set, the root is wrapped
// in single-child internals if the natural depth is smaller (test shapes
// such as chains use this).
inline TreeImage build(const std::vector<KV>& kvs, u32 fanout, u32 page_size = 512,
                       std::optional<u32> target_depth = std::nullopt) {
    if (fanout < 1 || fanout > kMaxLeafPairs) throw std::invalid_argument("fanout must be in [1, 31]");
    if (page_size < kBlockBytes || page_size % kBlockBytes != 0)
        throw std::invalid_argument("page size must be a positive multiple of 512");
    if (kvs.empty()) throw std::invalid_argument("cannot build an empty tree");
    for (std::size_t i = 1; i < kvs.size(); ++i)
        if (kvs[i - 1].key >= kvs[i].key) throw std::invalid_argument("keys must be sorted and unique");

    const u32 leaf_cap = std::min<u32>(fanout, kMaxLeafPairs);
    const u32 internal_cap = std::min<u32>(fanout, kMaxInternalKeys + 1); // children per internal

    // Level 0: leaves, evenly filled.
    std::vector<std::vector<detail::BuildNode>> levels(1);
    {
        const u64 n = kvs.size();
        const u64 nleaves = div_ceil(n, leaf_cap);
        const u64 base = n / nleaves;
        const u64 extra = n % nleaves;
        u64 pos = 0;
        for (u64 i = 0; i < nleaves; ++i) {
            const u64 take = base + (i < extra ? 1 : 0);
            detail::BuildNode node;
            node.leaf = true;
            for (u64 j = 0; j < take; ++j) {
                node.keys.push_back(kvs[pos + j].key);
                node.values.push_back(kvs[pos + j].value);
            }
            node.min_key = node.keys.front();
            pos += take;
            levels[0].push_back(std::move(node));
        }
    }

    while (levels.back().size() > 1) {
        const auto& below = levels.back();
        std::vector<detail::BuildNode> up;
        for (std::size_t i = 0; i < below.size(); i += internal_cap) {
            const std::size_t end = std::min(below.size(), i + internal_cap);
            detail::BuildNode node;
            for (std::size_t c = i; c < end; ++c) {
                node.children.push_back(c);
                if (c > i) node.keys.push_back(below[c].min_key); // separator = min of right subtree
            }
            node.min_key = below[i].min_key;
            up.push_back(std::move(node));
        }
        levels.push_back(std::move(up));
    }

    if (target_depth) {
        if (*target_depth < levels.size()) throw std::invalid_argument("requested depth below natural depth");
        while (levels.size() < *target_depth) {
            detail::BuildNode wrap;
            wrap.children.push_back(0);
            wrap.min_key = levels.back()[0].min_key;
            levels.push_back({wrap});
        }
    }

    // Breadth-first page numbering from the root down.
    const u32 depth = static_cast<u32>(levels.size());
    std::vector<u64> level_first_page(depth); // level index: 0 = leaves
    u64 page_counter = 0;
    for (u32 lvl = depth; lvl-- > 0;) {
        level_first_page[lvl] = page_counter;
        page_counter += levels[lvl].size();
    }

    TreeImage img;
    img.page_size = page_size;
    img.depth = depth;
    img.fanout = fanout;
    img.n_keys = kvs.size();
    img.bytes.assign(page_counter * page_size, std::byte{0});

    for (u32 lvl = 0; lvl < depth; ++lvl) {
        for (std::size_t i = 0; i < levels[lvl].size(); ++i) {
            const auto& node = levels[lvl][i];
            const u64 page_index = level_first_page[lvl] + i;
            std::span<std::byte> page{img.bytes.data() + page_index * page_size, page_size};
            detail::put_u16(page, 0, kPageMagic);
            page[2] = static_cast<std::byte>(node.leaf ? kKindLeaf : kKindInternal);
            page[3] = static_cast<std::byte>(lvl);
            detail::put_u16(page, 4, static_cast<u16>(node.keys.size()));
            if (node.leaf) {
                for (std::size_t k = 0; k < node.keys.size(); ++k) {
                    detail::put_u64(page, kHeaderBytes + 16ull * k, node.keys[k]);
                    detail::put_u64(page, kHeaderBytes + 16ull * k + 8, node.values[k]);
                }
            } else {
                for (std::size_t k = 0; k < node.keys.size(); ++k)
                    detail::put_u64(page, kHeaderBytes + 8ull * k, node.keys[k]);
                const u64 child_base = kHeaderBytes + 8ull * node.keys.size();
                for (std::size_t c = 0; c < node.children.size(); ++c) {
                    const u64 child_page = level_first_page[lvl - 1] + node.children[c];
                    detail::put_u64(page, child_base + 8ull * c, child_page * page_size);
                }
            }
        }
    }
    return img;
}

// Deterministic key material for generated trees: spaced keys so absent-key
// probes exist between any two present keys.
inline constexpr u64 kKeyStride = 7;

inline std::vector<KV> make_kvs(u64 n) {
    std::vector<KV> kvs(n);
    for (u64 i = 0; i < n; ++i) {
        const u64 key = 13 + i * kKeyStride;
        kvs[i] = KV{key, mix64(key)};
    }
    return kvs;
}

// Full tree of the requested shape: fanout^(depth-1) leaves, each holding
// `fanout` pairs (fanout 1 builds a single-key chain).
inline TreeImage build_full(u32 depth, u32 fanout, u32 page_size = 512) {
    if (depth < 1) throw std::invalid_argument("depth must be >= 1");
    u64 leaves = 1;
    for (u32 i = 1; i < depth; ++i) {
        leaves *= fanout;
        if (leaves > (1ull << 32)) throw std::invalid_argument("infeasible shape: too many pages");
    }
    const u64 n = leaves * std::min<u32>(fanout, kMaxLeafPairs);
    TreeImage img = build(make_kvs(n), fanout, page_size, depth);
    if (img.depth != depth) throw std::logic_error("builder produced wrong depth");
    return img;
}

struct LookupResult {
    bool found = false;
    u64 value = 0;
    u32 pages_read = 0;
    std::vector<u64> page_trail; // file offsets visited, root first
};

// User-space reference traversal: parses each page and follows child
// pointers; exactly `depth` pages are read for any key.
inline LookupResult lookup_user(const TreeImage& img, u64 key) {
    LookupResult res;
    u64 off = img.root_off();
    while (true) {
        const DecodedPage page = parse_page(img.page_at(off));
        ++res.pages_read;
        res.page_trail.push_back(off);
        if (page.kind == kKindLeaf) {
            for (std::size_t i = 0; i < page.keys.size(); ++i) {
                if (page.keys[i] == key) {
                    res.found = true;
                    res.value = page.values[i];
                    return res;
                }
            }
            return res;
        }
        std::size_t idx = 0;
        while (idx < page.keys.size() && page.keys[idx] <= key) ++idx;
        off = page.children[idx];
    }
}

inline std::vector<u64> collect_keys(const TreeImage& img) {
    std::vector<u64> keys;
    for (u64 p = 0; p < img.pages(); ++p) {
        const DecodedPage page = parse_page(img.page_at(p * img.page_size));
        if (page.kind == kKindLeaf) keys.insert(keys.end(), page.keys.begin(), page.keys.end());
    }
    std::sort(keys.begin(), keys.end());
    return keys;
}

// ---------------------------------------------------------------------------
// Lookup compiler. Emits the storage-function equivalent of lookup_user:
// on an internal page it resubmits the child covering the key; on a leaf it
// returns the 8-byte value (empty buffer when absent, so the caller can tell
// "not found" from a dropped chain); bad magic drops the chain.
//
// Register use: r7 search key (chain argument), r0 header word, r2 kind,
// r3 count, r4 child index accumulator, r5 scratch loads, r6 constants.

// Body variant: expects the search key in r7 at invocation.
inline sfunc::Program compile_lookup_body() {
    using namespace sfunc;
    Asm a;
    std::vector<u32> to_drop, to_leaf, to_children, to_notfound;

    a.loadw_at(0, 0);          // magic | kind<<16 | level<<24
    a.mov(1, 0);
    a.and_imm(1, 0xFFFF);
    a.movi(6, kPageMagic);
    to_drop.push_back(a.jne(1, 6));
    a.mov(2, 0);
    a.shr_imm(2, 16);
    a.and_imm(2, 0xFF);        // kind
    a.loadw_at(3, 4);
    a.and_imm(3, 0xFFFF);      // count
    a.movi(6, kKindLeaf);
    to_leaf.push_back(a.jeq(2, 6));

    // Internal scan, unrolled: r4 = number of separators <= key.
    a.movi(4, 0);
    for (u32 i = 0; i < kMaxInternalKeys; ++i) {
        a.movi(6, i + 1);
        to_children.push_back(a.jlt(3, 6));            // count <= i: scan done
        a.loadq_at(5, kHeaderBytes + 8ull * i);
        to_children.push_back(a.jlt(7, 5));            // key < keys[i]: scan done
        a.add_imm(4, 1);
    }
    a.patch_all(to_children, a.here());
    a.add_reg(4, 3);           // children start after count keys
    a.shl_imm(4, 3);
    a.add_imm(4, kHeaderBytes);
    a.loadq(5, 4, 0);          // register-indexed: runtime bounds trap
    a.resubmit(5);

    // Leaf scan, unrolled exact match.
    a.patch_all(to_leaf, a.here());
    std::vector<u32> found_at(kMaxLeafPairs);
    for (u32 i = 0; i < kMaxLeafPairs; ++i) {
        a.movi(6, i + 1);
        to_notfound.push_back(a.jlt(3, 6));
        a.loadq_at(5, kHeaderBytes + 16ull * i);
        found_at[i] = a.jeq(7, 5);
    }
    a.patch_all(to_notfound, a.here());
    a.ret(); // empty buffer: key absent

    for (u32 i = 0; i < kMaxLeafPairs; ++i) {
        a.patch(found_at[i], a.here());
        a.loadq_at(5, kHeaderBytes + 16ull * i + 8);
        a.emit(5, 8);
        a.ret();
    }

    a.patch_all(to_drop, a.here());
    a.drop();
    return a.finish("btree-lookup", 8);
}

// Keyed variant: the key is baked into the program as its first
// instruction; otherwise identical to the body.
inline sfunc::Program compile_lookup(u64 key) {
    sfunc::Program body = compile_lookup_body();
    sfunc::Program p;
    p.name = body.name;
    p.ret_buf_cap = body.ret_buf_cap;
    p.code.reserve(body.code.size() + 1);
    p.code.push_back({sfunc::Op::MovI, 7, sfunc::kNoReg, key});
    for (auto in : body.code) {
        if (sfunc::detail::is_branch(in.op)) in.imm += 1; // account for the prefix
        p.code.push_back(in);
    }
    return p;
}

// ---------------------------------------------------------------------------
// Image file I/O (.btx): the raw page array, nothing else. Page size is not
// recorded in the file and must be supplied on load.

inline void save_image(const TreeImage& img, const std::string& path) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot open for writing: " + path);
    out.write(reinterpret_cast<const char*>(img.bytes.data()), static_cast<std::streamsize>(img.bytes.size()));
    if (!out) throw std::runtime_error("write failed: " + path);
}

inline TreeImage load_image(const std::string& path, u32 page_size) {
    std::ifstream in(path, std::ios::binary | std::ios::ate);
    if (!in) throw std::runtime_error("cannot open image: " + path);
    const auto size = static_cast<u64>(in.tellg());
    if (size == 0 || page_size < kBlockBytes || page_size % kBlockBytes != 0 || size % page_size != 0)
        throw std::runtime_error("image size is not a whole number of pages: " + path);
    in.seekg(0);
    TreeImage img;
    img.page_size = page_size;
    img.bytes.resize(size);
    in.read(reinterpret_cast<char*>(img.bytes.data()), static_cast<std::streamsize>(size));
    if (!in) throw std::runtime_error("read failed: " + path);

    const DecodedPage root = parse_page(img.page_at(0));
    img.depth = root.level + 1u;
    u64 keys = 0;
    u32 fanout = 1;
    for (u64 p = 0; p < img.pages(); ++p) {
        const DecodedPage page = parse_page(img.page_at(p * page_size));
        if (page.kind == kKindLeaf) {
            keys += page.count;
            fanout = std::max<u32>(fanout, page.count);
        } else {
            fanout = std::max<u32>(fanout, page.count + 1u);
        }
    }
    img.n_keys = keys;
    img.fanout = fanout;
    return img;
}

// Extent layout that slices the image into `pieces` physically discontiguous
// extents with every interior boundary in the middle of a page, so page
// reads across a boundary exercise the split path.
inline ExtentMap scatter_extents(u64 image_bytes, u32 page_size, u32 pieces, u64 base_pba = 0,
                                 u64 gap_blocks = 2048) {
    if (pieces < 1) throw std::invalid_argument("pieces must be >= 1");
    const u64 total_blocks = image_bytes / kBlockBytes;
    const u64 page_blocks = page_size / kBlockBytes;
    if (pieces == 1) return ExtentMap::single(base_pba, image_bytes);
    if (page_blocks < 2)
        throw std::invalid_argument("scatter needs page size > 512 so a boundary can land inside a page");

    std::vector<u64> cuts; // in blocks, strictly increasing, mid-page
    for (u32 i = 1; i < pieces; ++i) {
        u64 raw = total_blocks * i / pieces;
        u64 snapped = (raw / page_blocks) * page_blocks + page_blocks / 2;
        if (snapped >= total_blocks) snapped -= page_blocks;
        if (!cuts.empty() && snapped <= cuts.back()) snapped = cuts.back() + page_blocks;
        if (snapped == 0 || snapped >= total_blocks)
            throw std::invalid_argument("image too small to scatter into that many pieces");
        cuts.push_back(snapped);
    }

    std::vector<Extent> extents;
    u64 prev = 0;
    for (u32 j = 0; j <= cuts.size(); ++j) {
        const u64 end = (j < cuts.size()) ? cuts[j] : total_blocks;
        extents.push_back(Extent{prev * kBlockBytes, base_pba + prev + j * gap_blocks,
                                 (end - prev) * kBlockBytes});
        prev = end;
    }
    return ExtentMap(std::move(extents), image_bytes);
}

} // namespace iosim::btree
