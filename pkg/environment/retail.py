"""Handlers for the mock retail domain shipped in data/domains/retail.json."""

from environment.domain import ToolError, tool_handler

CANCEL_REASONS = ('no longer needed', 'ordered by mistake')


def _order(db, order_id):
    order = db['orders'].get(order_id)
    if order is None:
        raise ToolError(f'Order {order_id} not found')
    return order


def _user(db, user_id):
    user = db['users'].get(user_id)
    if user is None:
        raise ToolError(f'User {user_id} not found')
    return user


@tool_handler('retail', 'find_user')
def find_user(db, email):
    wanted = email.strip().lower()
    for user_id, user in sorted(db['users'].items()):
        if user['email'].lower() == wanted:
            return {'user_id': user_id, 'name': user['name'], 'orders': list(user['orders'])}
    raise ToolError(f'No user with email {email}')


@tool_handler('retail', 'get_order')
def get_order(db, order_id):
    return {'order_id': order_id, **_order(db, order_id)}


@tool_handler('retail', 'list_products')
def list_products(db):
    return {'products': db['products']}


@tool_handler('retail', 'cancel_order')
def cancel_order(db, order_id, reason):
    order = _order(db, order_id)
    if order['status'] != 'pending':
        raise ToolError(f'Order {order_id} is {order["status"]}; only pending orders can be cancelled')
    if reason not in CANCEL_REASONS:
        raise ToolError(f'Cancellation reason must be one of {list(CANCEL_REASONS)}')
    order['status'] = 'cancelled'
    order['cancel_reason'] = reason
    return {'order_id': order_id, 'status': 'cancelled'}


@tool_handler('retail', 'exchange_item')
def exchange_item(db, order_id, item_id, new_item_id):
    order = _order(db, order_id)
    if order['status'] != 'delivered':
        raise ToolError(f'Order {order_id} is {order["status"]}; only delivered orders can be exchanged')
    line = next((line for line in order['items'] if line['item_id'] == item_id), None)
    if line is None:
        raise ToolError(f'Item {item_id} is not part of order {order_id}')
    product = db['products'].get(line['product_id'], {})
    new_item = product.get('items', {}).get(new_item_id)
    if new_item is None:
        raise ToolError(f'Item {new_item_id} does not belong to product {line["product_id"]}')
    if not new_item['available']:
        raise ToolError(f'Item {new_item_id} is not available')
    order['status'] = 'exchange requested'
    order['exchange'] = {'from': item_id, 'to': new_item_id, 'price_difference': new_item['price'] - line['price']}
    return {'order_id': order_id, 'status': order['status'], 'exchange': order['exchange']}


@tool_handler('retail', 'update_address')
def update_address(db, user_id, address):
    user = _user(db, user_id)
    user['address'] = address.strip()
    return {'user_id': user_id, 'address': user['address']}


@tool_handler('retail', 'transfer_to_human_agents')
def transfer_to_human_agents(db, summary):
    return {'transferred': True, 'summary': summary}
