pub mod evaluate;
pub mod gen_data;
pub mod grad_check;
pub mod predict;
pub mod train;
