#pragma once

namespace bpsl {

// Every data-parallel kernel takes an execution policy. The serial path is the
// reference the OpenMP path is tested against; both produce identical results
// because no kernel reduces floating-point values across threads.
enum class Exec { serial, parallel };

int hardware_threads();

}  // namespace bpsl
