/** Wire types mirroring the engine's /v1 JSON schemas (schema_version 1). */

export type LayerGroup = "low" | "mid" | "high";

export const LAYER_GROUPS: LayerGroup[] = ["low", "mid", "high"];

export interface RectJson {
  x: number;
  y: number;
  w: number;
  h: number;
}

export interface DatasetInfo {
  dataset_id: string;
  category: string;
  part_name: string;
  n_images: number;
  aogs: string[];
}

export interface PartAnnotationJson {
  template_id: string;
  part_box: RectJson;
}

export interface ImageRecordJson {
  image_id: string;
  width_px: number;
  height_px: number;
  object_box: RectJson;
  part_annotations: PartAnnotationJson[];
  split: string;
}

export interface UnitRef {
  layer_id: string;
  channel: number;
  x: number;
  y: number;
}

export interface PatternAssignmentJson {
  pattern_id: string;
  unit: UnitRef;
  unit_region: RectJson;
  response: number;
  deform_penalty: number;
  geo_penalty: number;
  contribution: number;
}

export interface ParseTreeJson {
  parse_tree_version: number;
  image_id: string;
  chosen_template_id: string;
  part_region: RectJson;
  total_score: number;
  pattern_assignments: PatternAssignmentJson[];
}

export interface PatternSummary {
  pattern_id: string;
  template_id: string;
  group: LayerGroup;
  active: boolean;
  contribution: number | null;
}

export interface SessionDescriptor {
  session_id: string;
  manifest: string;
  aog: string;
  part_name: string;
  active_image: string | null;
  undo_depth: number;
  patterns: PatternSummary[];
}

export interface LayoutPatternJson {
  pattern_id: string;
  group: string;
  peak_px: [number, number];
  contribution: number;
}

export interface OverlayLayoutJson {
  layout_version: number;
  image_id: string;
  width_px: number;
  height_px: number;
  chosen_template_id: string;
  part_box: RectJson;
  total_score: number;
  groups: { group_id: string; patterns: LayoutPatternJson[] }[];
}

export interface PruneEvidenceJson {
  pattern_id: string;
  unit_center: [number, number];
  center_inside: boolean;
  inside_mass: number;
  outside_mass: number;
  source: "saliency" | "fallback";
  proposed: boolean;
}

export interface EvalRowJson {
  image_id: string;
  predicted_center: [number, number];
  gt_center: [number, number];
  normalized_distance: number;
}

export interface EvalReportJson {
  category: string;
  part_name: string;
  rows: EvalRowJson[];
  failures: { image_id: string; error: string }[];
  aggregates: { count: number; mean_nd: number; median_nd: number };
  config: Record<string, unknown>;
}

export interface DatasetsResponse {
  schema_version: number;
  datasets: DatasetInfo[];
}

export interface ImagesResponse {
  schema_version: number;
  images: ImageRecordJson[];
}

export interface SessionResponse {
  schema_version: number;
  session: SessionDescriptor;
}

export interface ParseResponse {
  schema_version: number;
  tree: ParseTreeJson;
}

export interface OverlayResponse {
  schema_version: number;
  layout: OverlayLayoutJson;
  png_base64: string;
}

export interface AnnotateResponse {
  schema_version: number;
  proposals: string[];
  evidence: PruneEvidenceJson[];
}

export interface MetricsResponse {
  schema_version: number;
  report: EvalReportJson;
}
